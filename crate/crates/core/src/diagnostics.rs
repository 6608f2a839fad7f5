//! CSV export of per-input sampling probabilities, cost matrices, transport
//! plans and attention weights.

use crate::error::{Error, Result};
use crate::model::GraphDiagnostics;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub const SAMPLING_FILE: &str = "sampling.csv";
pub const COSTS_FILE: &str = "costs.csv";
pub const PLANS_FILE: &str = "plans.csv";
pub const ATTENTION_FILE: &str = "attention.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

fn line(s: &mut String, args: std::fmt::Arguments<'_>) {
    s.write_fmt(args).expect("string write");
    s.push('\n');
}

pub fn sampling_csv(inputs: &[(usize, &GraphDiagnostics)]) -> String {
    let mut s = String::from("input_id,key_id,node_index,probability\n");
    for (id, d) in inputs {
        for (key, factor) in d.sampling.iter().enumerate() {
            if let Some(f) = factor {
                for (u, p) in f.p.iter().enumerate() {
                    line(&mut s, format_args!("{id},{key},{u},{p}"));
                }
            }
        }
    }
    s
}

pub fn costs_csv(inputs: &[(usize, &GraphDiagnostics)]) -> String {
    let mut s = String::from("input_id,key_id,row,col,value\n");
    for (id, d) in inputs {
        for (key, m) in d.costs.iter().enumerate() {
            for r in 0..m.rows() {
                for (c, v) in m.row(r).iter().enumerate() {
                    line(&mut s, format_args!("{id},{key},{r},{c},{v}"));
                }
            }
        }
    }
    s
}

pub fn plans_csv(inputs: &[(usize, &GraphDiagnostics)]) -> String {
    let mut s = String::from("input_id,key_id,lambda,row,col,value\n");
    for (id, d) in inputs {
        for (key, plans) in d.plans.iter().enumerate() {
            for p in plans {
                for r in 0..p.plan.rows() {
                    for (c, v) in p.plan.row(r).iter().enumerate() {
                        line(&mut s, format_args!("{id},{key},{},{r},{c},{v}", p.lambda));
                    }
                }
            }
        }
    }
    s
}

/// One row per input with one weight column per sensitivity.
pub fn attention_csv(inputs: &[(usize, &GraphDiagnostics)]) -> String {
    let lambdas = inputs.first().map(|(_, d)| d.lambdas.clone()).unwrap_or_default();
    let mut s = String::from("input_id");
    for l in &lambdas {
        write!(s, ",lambda_{l}").expect("string write");
    }
    s.push('\n');
    for (id, d) in inputs {
        write!(s, "{id}").expect("string write");
        for a in &d.attention {
            write!(s, ",{a}").expect("string write");
        }
        s.push('\n');
    }
    s
}

pub fn summary(inputs: &[(usize, &GraphDiagnostics)]) -> String {
    let mut s = String::new();
    for (id, d) in inputs {
        let kept: Vec<String> = d
            .selected
            .iter()
            .zip(&d.costs)
            .map(|(sel, m)| format!("{}/{}", sel.len(), m.cols()))
            .collect();
        line(&mut s, format_args!("input {id}"));
        line(&mut s, format_args!("  predicted class: {}", d.predicted_class()));
        line(&mut s, format_args!("  class probabilities: {:?}", d.probabilities));
        line(&mut s, format_args!("  kl: {}", d.kl));
        line(&mut s, format_args!("  kept key nodes: {}", kept.join(" ")));
        line(&mut s, format_args!("  embedding: {:?}", d.embedding));
    }
    s
}

/// Writes every diagnostic file for `inputs` under `dir`, creating it.
pub fn export_diagnostics(dir: &Path, inputs: &[(usize, &GraphDiagnostics)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in [
        (SAMPLING_FILE, sampling_csv(inputs)),
        (COSTS_FILE, costs_csv(inputs)),
        (PLANS_FILE, plans_csv(inputs)),
        (ATTENTION_FILE, attention_csv(inputs)),
        (SUMMARY_FILE, summary(inputs)),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
