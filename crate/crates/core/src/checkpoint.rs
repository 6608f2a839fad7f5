//! Text checkpoints that round-trip every tensor bit for bit.
//!
//! Layout: a magic line, `config <key> <value>` lines, then one
//! `tensor <name> <rows> <cols>` header per tensor followed by a line of
//! space-separated IEEE-754 bit patterns in hex.

use crate::error::{Error, Result};
use crate::gcn::{Branch, EncoderParams};
use crate::model::{BaseGraphDictionary, ClassifierHead, DictionaryKey, LossConfig, Model, ModelConfig, ModelParameters};
use crate::mswe::SinkhornConfig;
use crate::tensor::Matrix;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

const MAGIC: &str = "ssgde-checkpoint v1";

fn hex_list(values: &[f64]) -> String {
    values.iter().map(|v| format!("{:016x}", v.to_bits())).collect::<Vec<_>>().join(" ")
}

fn parse_hex_list(s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| u64::from_str_radix(t, 16).map(f64::from_bits).map_err(|e| Error::Checkpoint(format!("bad value {t:?}: {e}"))))
        .collect()
}

pub fn to_text(model: &Model) -> String {
    let c = &model.config;
    let mut out = format!("{MAGIC}\n");
    let mut kv = |k: &str, v: String| writeln!(out, "config {k} {v}").expect("string write");
    kv("feature_scheme", c.feature_scheme.to_string());
    kv("input_dim", c.input_dim.to_string());
    kv("max_nodes", c.max_nodes.to_string());
    kv("num_classes", c.num_classes.to_string());
    kv("encoder_dims", c.encoder_dims.map(|d| d.to_string()).join(","));
    kv("keys", c.keys.to_string());
    kv("lambdas", hex_list(&c.lambdas));
    kv("head_hidden", c.head_hidden.to_string());
    kv("temperature", hex_list(&[c.temperature]));
    kv("momentum", hex_list(&[c.momentum]));
    kv("beta", hex_list(&[c.loss.beta]));
    kv("p_hat", hex_list(&[c.loss.p_hat]));
    kv("sinkhorn_max_iter", c.sinkhorn.max_iter.to_string());
    kv("sinkhorn_tol", hex_list(&[c.sinkhorn.tol]));
    kv("sinkhorn_log_threshold", hex_list(&[c.sinkhorn.log_domain_threshold]));
    kv("key_classes", model.params.dictionary.keys.iter().map(|k| k.class_label.to_string()).collect::<Vec<_>>().join(","));

    let mut tensor = |name: &str, m: &Matrix| {
        writeln!(out, "tensor {name} {} {}", m.rows(), m.cols()).expect("string write");
        writeln!(out, "{}", hex_list(m.as_slice())).expect("string write");
    };
    let p = &model.params;
    tensor("w_r", &p.w_r);
    for (i, w) in p.input_encoder.weights.iter().enumerate() {
        tensor(&format!("input_encoder.{i}"), w);
    }
    for (i, w) in p.dictionary_encoder.weights.iter().enumerate() {
        tensor(&format!("dictionary_encoder.{i}"), w);
    }
    for (j, k) in p.dictionary.keys.iter().enumerate() {
        tensor(&format!("key.{j}.features"), &k.features);
        tensor(&format!("key.{j}.adjacency"), &k.adjacency);
    }
    tensor("w_m", &p.w_m);
    tensor("head.w1", &p.head.w1);
    tensor("head.b1", &p.head.b1);
    tensor("head.w2", &p.head.w2);
    tensor("head.b2", &p.head.b2);
    out
}

pub fn from_text(text: &str) -> Result<Model> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Checkpoint("missing header".into()));
    }
    let mut config: BTreeMap<String, String> = BTreeMap::new();
    let mut tensors: BTreeMap<String, Matrix> = BTreeMap::new();
    while let Some(line) = lines.next() {
        let mut parts = line.splitn(3, ' ');
        match parts.next() {
            Some("config") => {
                let key = parts.next().ok_or_else(|| Error::Checkpoint("config line without key".into()))?;
                config.insert(key.into(), parts.next().unwrap_or("").into());
            }
            Some("tensor") => {
                let name = parts.next().ok_or_else(|| Error::Checkpoint("tensor line without name".into()))?;
                let dims: Vec<usize> = parts
                    .next()
                    .unwrap_or("")
                    .split(' ')
                    .map(|d| d.parse().map_err(|_| Error::Checkpoint(format!("bad shape for {name}"))))
                    .collect::<Result<_>>()?;
                if dims.len() != 2 {
                    return Err(Error::Checkpoint(format!("bad shape for {name}")));
                }
                let values = parse_hex_list(lines.next().unwrap_or(""))?;
                let m = Matrix::from_vec(dims[0], dims[1], values).map_err(|_| Error::Checkpoint(format!("size mismatch for {name}")))?;
                tensors.insert(name.into(), m);
            }
            Some("") | None => {}
            Some(other) => return Err(Error::Checkpoint(format!("unexpected record {other:?}"))),
        }
    }

    let get = |k: &str| config.get(k).ok_or_else(|| Error::Checkpoint(format!("missing config {k}")));
    let int = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Checkpoint(format!("bad integer for {k}"))) };
    let float = |k: &str| -> Result<f64> {
        match parse_hex_list(get(k)?)?.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::Checkpoint(format!("expected one value for {k}"))),
        }
    };
    let dims: Vec<usize> = get("encoder_dims")?
        .split(',')
        .map(|d| d.parse().map_err(|_| Error::Checkpoint("bad encoder_dims".into())))
        .collect::<Result<_>>()?;
    let encoder_dims: [usize; 3] = dims.try_into().map_err(|_| Error::Checkpoint("encoder_dims needs 3 entries".into()))?;
    let config = ModelConfig {
        feature_scheme: get("feature_scheme")?.parse()?,
        input_dim: int("input_dim")?,
        max_nodes: int("max_nodes")?,
        num_classes: int("num_classes")?,
        encoder_dims,
        keys: int("keys")?,
        lambdas: parse_hex_list(get("lambdas")?)?,
        head_hidden: int("head_hidden")?,
        temperature: float("temperature")?,
        momentum: float("momentum")?,
        loss: LossConfig { beta: float("beta")?, p_hat: float("p_hat")? },
        sinkhorn: SinkhornConfig {
            max_iter: int("sinkhorn_max_iter")?,
            tol: float("sinkhorn_tol")?,
            log_domain_threshold: float("sinkhorn_log_threshold")?,
        },
    };
    config.validate()?;
    let key_classes: Vec<usize> = get("key_classes")?
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|d| d.parse().map_err(|_| Error::Checkpoint("bad key_classes".into())))
        .collect::<Result<_>>()?;
    if key_classes.len() != config.keys {
        return Err(Error::Checkpoint("key count disagrees with config".into()));
    }

    let mut take = |name: &str| tensors.remove(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")));
    let w_r = take("w_r")?;
    let input = [take("input_encoder.0")?, take("input_encoder.1")?, take("input_encoder.2")?];
    let dict = [take("dictionary_encoder.0")?, take("dictionary_encoder.1")?, take("dictionary_encoder.2")?];
    let mut keys = Vec::with_capacity(config.keys);
    for (j, &class_label) in key_classes.iter().enumerate() {
        keys.push(DictionaryKey {
            features: take(&format!("key.{j}.features"))?,
            adjacency: take(&format!("key.{j}.adjacency"))?,
            class_label,
        });
    }
    let params = ModelParameters {
        w_r,
        input_encoder: EncoderParams { weights: input, branch: Branch::Input },
        dictionary_encoder: EncoderParams { weights: dict, branch: Branch::Dictionary },
        dictionary: BaseGraphDictionary { keys },
        w_m: take("w_m")?,
        head: ClassifierHead { w1: take("head.w1")?, b1: take("head.b1")?, w2: take("head.w2")?, b2: take("head.b2")? },
    };
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    check_shapes(&config, &params)?;
    Ok(Model { config, params })
}

fn check_shapes(c: &ModelConfig, p: &ModelParameters) -> Result<()> {
    let [d1, d2, d3] = c.encoder_dims;
    let expect = |m: &Matrix, shape: (usize, usize), what: &str| {
        if m.shape() == shape {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!("{what} has shape {:?}, expected {shape:?}", m.shape())))
        }
    };
    expect(&p.w_r, (c.max_nodes, 1), "w_r")?;
    for enc in [&p.input_encoder, &p.dictionary_encoder] {
        expect(&enc.weights[0], (c.input_dim, d1), "encoder layer 1")?;
        expect(&enc.weights[1], (d1, d2), "encoder layer 2")?;
        expect(&enc.weights[2], (d2, d3), "encoder layer 3")?;
    }
    for k in &p.dictionary.keys {
        let n = k.features.rows();
        expect(&k.features, (n, c.input_dim), "key features")?;
        expect(&k.adjacency, (n, n), "key adjacency")?;
    }
    expect(&p.w_m, (c.keys, 1), "w_m")?;
    expect(&p.head.w1, (c.keys, c.head_hidden), "head.w1")?;
    expect(&p.head.b1, (1, c.head_hidden), "head.b1")?;
    expect(&p.head.w2, (c.head_hidden, c.num_classes), "head.w2")?;
    expect(&p.head.b2, (1, c.num_classes), "head.b2")
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_text(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::FeatureScheme;
    use crate::model::PreparedGraph;
    use crate::synthetic::two_class_dataset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> Model {
        let data = two_class_dataset(3, 3, 6, 3, 1);
        let graphs: Vec<PreparedGraph> =
            data.graphs.iter().map(|g| PreparedGraph::new(g, FeatureScheme::NodeLabelOneHot, 3).unwrap()).collect();
        let refs: Vec<&PreparedGraph> = graphs.iter().collect();
        let mut cfg = ModelConfig::new(FeatureScheme::NodeLabelOneHot, 3, 6, 2);
        cfg.keys = 3;
        cfg.encoder_dims = [4, 5, 6];
        cfg.loss.beta = 0.1 + 0.2;
        Model::init(cfg, &refs, 2, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&m, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_text(&back), to_text(&m));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let text = to_text(&model());
        assert!(matches!(from_text("nope"), Err(Error::Checkpoint(_))));
        let truncated: String = text.lines().take(20).collect::<Vec<_>>().join("\n");
        assert!(matches!(from_text(&truncated), Err(Error::Checkpoint(_))));
        let bad = text.replacen("tensor w_r 6 1", "tensor w_r 5 1", 1);
        assert!(matches!(from_text(&bad), Err(Error::Checkpoint(_))));
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
