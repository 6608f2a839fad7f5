use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ssgde::checkpoint;
use ssgde::diagnostics::export_diagnostics;
use ssgde::graph::{load_tu_dataset, DatasetBundle};
use ssgde::model::{Model, PreparedGraph};
use ssgde::train::{run_cv, write_run, TrainConfig};
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "ssgde", version, about = "Graph dictionary embedding classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-validated training; writes metrics and one checkpoint per fold.
    Train(TrainArgs),
    /// Scores a checkpoint on every graph of a dataset.
    Eval(EvalArgs),
    /// Writes probabilities, costs, plans and attention for one graph.
    ExportDiagnostics(ExportArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Key = value file applied before any flag.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    /// Directory holding `<dataset>/<dataset>_A.txt` or the TU files directly.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Start from the 100-epoch preset instead of the 500-epoch default.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    p_hat: Option<f64>,
    #[arg(long)]
    keys: Option<usize>,
    #[arg(long)]
    sensitivities: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Optional per-graph predictions CSV.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    graph_id: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

fn base_config(data: &DataArgs, desk: bool) -> Result<TrainConfig> {
    let mut cfg = if desk { TrainConfig::desk() } else { TrainConfig::default() };
    if let Some(path) = &data.config {
        cfg.apply_file(path)?;
    }
    if let Some(d) = &data.dataset {
        cfg.dataset = d.clone();
    }
    if let Some(d) = &data.data_dir {
        cfg.data_dir = d.clone();
    }
    Ok(cfg)
}

/// Accepts either the dataset folder itself or its parent.
fn load_dataset(cfg: &TrainConfig) -> Result<DatasetBundle> {
    let nested = cfg.data_dir.join(&cfg.dataset);
    let dir = if nested.join(format!("{}_A.txt", cfg.dataset)).exists() { nested } else { cfg.data_dir.clone() };
    load_tu_dataset(&dir, &cfg.dataset).with_context(|| format!("loading {} from {}", cfg.dataset, dir.display()))
}

fn prepare_for(model: &Model, bundle: &DatasetBundle) -> Result<Vec<PreparedGraph>> {
    let c = &model.config;
    Ok(bundle
        .graphs
        .iter()
        .map(|g| PreparedGraph::new(g, c.feature_scheme, c.input_dim))
        .collect::<ssgde::Result<_>>()?)
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = base_config(&args.data, args.desk)?;
    macro_rules! flag {
        ($field:expr, $value:expr) => {
            if let Some(v) = $value {
                $field = v;
            }
        };
    }
    flag!(cfg.epochs, args.epochs);
    flag!(cfg.adam.learning_rate, args.lr);
    flag!(cfg.beta, args.beta);
    flag!(cfg.p_hat, args.p_hat);
    flag!(cfg.keys, args.keys);
    flag!(cfg.sensitivities, args.sensitivities);
    flag!(cfg.seed, args.seed);
    flag!(cfg.folds, args.folds);
    flag!(cfg.batch_size, args.batch_size);
    flag!(cfg.threads, args.threads);
    if args.out.is_some() {
        cfg.out = args.out;
    }
    for kv in &args.overrides {
        let Some((k, v)) = kv.split_once('=') else { bail!("--set expects KEY=VALUE, got {kv:?}") };
        cfg.set(k, v)?;
    }
    let bundle = load_dataset(&cfg)?;
    log::info!("{}: {} graphs, {} classes", bundle.name, bundle.graphs.len(), bundle.num_classes);
    let (report, models) = run_cv(&bundle, &cfg)?;
    print!("{}", report.table());
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(&cfg.dataset));
    write_run(&out, &report, &models)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let model = checkpoint::load(&args.checkpoint)?;
    let bundle = load_dataset(&base_config(&args.data, false)?)?;
    let prepared = prepare_for(&model, &bundle)?;
    let refs: Vec<&PreparedGraph> = prepared.iter().collect();
    let out = model.predict(&refs)?;
    let mut csv = String::from("graph_id,label,predicted\n");
    let mut hits = 0;
    for (i, (d, g)) in out.iter().zip(&refs).enumerate() {
        let p = d.predicted_class();
        hits += usize::from(p == g.label);
        writeln!(csv, "{i},{},{p}", g.label)?;
    }
    println!("{}: accuracy {:.4} over {} graphs", bundle.name, hits as f64 / refs.len() as f64, refs.len());
    if let Some(path) = &args.predictions {
        std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn export(args: ExportArgs) -> Result<()> {
    let model = checkpoint::load(&args.checkpoint)?;
    let bundle = load_dataset(&base_config(&args.data, false)?)?;
    let Some(graph) = bundle.graphs.get(args.graph_id) else {
        bail!("graph id {} out of range ({} graphs)", args.graph_id, bundle.graphs.len())
    };
    let c = &model.config;
    let prepared = PreparedGraph::new(graph, c.feature_scheme, c.input_dim)?;
    let d = model.predict(&[&prepared])?.remove(0);
    export_diagnostics(&args.out, &[(args.graph_id, &d)])?;
    println!("wrote diagnostics for graph {} to {}", args.graph_id, args.out.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::ExportDiagnostics(a) => export(a),
    }
}
