//! Optimizer, configuration and the cross-validation harness.

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::gcn::DEFAULT_DIMS;
use crate::graph::{stratified_folds, DatasetBundle, FeatureScheme};
use crate::model::{
    ForwardMode, Model, ModelConfig, PreparedGraph, DEFAULT_BETA, DEFAULT_HEAD_HIDDEN, DEFAULT_KEYS, DEFAULT_MOMENTUM,
};
use crate::mswe::{select_lambdas, SinkhornConfig};
use crate::tensor::Matrix;
use crate::vgda::{DEFAULT_P_HAT, DEFAULT_TEMPERATURE};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    /// Decoupled: each step also subtracts `lr·wd·θ`.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, weight_decay: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments per tensor plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let m: Vec<Matrix> = params.into_iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self { v: m.clone(), m, step: 0 }
    }
}

/// One bias-corrected Adam update with decoupled weight decay.
pub fn adam_step(params: &mut [&mut Matrix], grads: &[Matrix], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Config(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        let (p, g, m, v) = (p.as_mut_slice(), g.as_slice(), m.as_mut_slice(), v.as_mut_slice());
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let update = (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
            p[i] -= cfg.learning_rate * (update + cfg.weight_decay * p[i]);
        }
    }
    Ok(())
}

/// Every knob of a cross-validation run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dataset: String,
    pub data_dir: PathBuf,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub beta: f64,
    pub p_hat: f64,
    pub keys: usize,
    pub sensitivities: usize,
    /// Explicit λ values; overrides `sensitivities` when set.
    pub lambdas: Option<Vec<f64>>,
    pub momentum: f64,
    pub seed: u64,
    pub folds: usize,
    pub batch_size: usize,
    pub encoder_dims: [usize; 3],
    pub head_hidden: usize,
    pub temperature: f64,
    /// `None` picks node labels when present, degrees otherwise.
    pub feature_scheme: Option<FeatureScheme>,
    pub sinkhorn: SinkhornConfig,
    /// Worker threads for folds; 0 means all available cores.
    pub threads: usize,
    pub out: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: "MUTAG".into(),
            data_dir: PathBuf::from("data"),
            epochs: 500,
            adam: AdamConfig::default(),
            beta: DEFAULT_BETA,
            p_hat: DEFAULT_P_HAT,
            keys: DEFAULT_KEYS,
            sensitivities: 8,
            lambdas: None,
            momentum: DEFAULT_MOMENTUM,
            seed: 0,
            folds: 10,
            batch_size: 32,
            encoder_dims: DEFAULT_DIMS,
            head_hidden: DEFAULT_HEAD_HIDDEN,
            temperature: DEFAULT_TEMPERATURE,
            feature_scheme: None,
            sinkhorn: SinkhornConfig::default(),
            threads: 0,
            out: None,
        }
    }
}

/// Epoch count of the quick preset.
pub const DESK_EPOCHS: usize = 100;

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

impl TrainConfig {
    /// Default settings with the epoch count cut to 100.
    pub fn desk() -> Self {
        Self { epochs: DESK_EPOCHS, ..Self::default() }
    }

    /// Sets one option by its file/flag name (dashes and underscores are
    /// interchangeable).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "dataset" => self.dataset = value.to_string(),
            "data_dir" => self.data_dir = PathBuf::from(value),
            "epochs" => self.epochs = parse(key, value)?,
            "lr" | "learning_rate" => self.adam.learning_rate = parse(key, value)?,
            "weight_decay" => self.adam.weight_decay = parse(key, value)?,
            "adam_beta1" => self.adam.beta1 = parse(key, value)?,
            "adam_beta2" => self.adam.beta2 = parse(key, value)?,
            "adam_eps" => self.adam.eps = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "p_hat" => self.p_hat = parse(key, value)?,
            "keys" => self.keys = parse(key, value)?,
            "sensitivities" => self.sensitivities = parse(key, value)?,
            "lambdas" => self.lambdas = Some(parse_list(key, value)?),
            "momentum" => self.momentum = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "folds" => self.folds = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "encoder_dims" => {
                self.encoder_dims = parse_list::<usize>(key, value)?
                    .try_into()
                    .map_err(|_| Error::Config("encoder_dims needs three comma-separated sizes".into()))?
            }
            "head_hidden" => self.head_hidden = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "feature_scheme" => self.feature_scheme = if value == "auto" { None } else { Some(value.parse()?) },
            "sinkhorn_max_iter" => self.sinkhorn.max_iter = parse(key, value)?,
            "sinkhorn_tol" => self.sinkhorn.tol = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown option {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn lambda_values(&self) -> Result<Vec<f64>> {
        match &self.lambdas {
            Some(l) => Ok(l.clone()),
            None => select_lambdas(self.sensitivities),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("need at least 2 folds".into()));
        }
        if !(self.adam.learning_rate > 0.0) || self.adam.weight_decay < 0.0 {
            return Err(Error::Config("learning rate must be positive and weight decay nonnegative".into()));
        }
        self.lambda_values()?;
        Ok(())
    }
}

/// Featurization resolved for a dataset and training split.
pub fn resolve_features(bundle: &DatasetBundle, config: &TrainConfig, train: &[usize]) -> Result<(FeatureScheme, usize)> {
    let scheme = config.feature_scheme.unwrap_or(if bundle.num_node_labels > 0 {
        FeatureScheme::NodeLabelOneHot
    } else {
        FeatureScheme::DegreeOneHot
    });
    let dim = match scheme {
        FeatureScheme::NodeLabelOneHot => bundle.num_node_labels,
        FeatureScheme::DegreeOneHot => train.iter().map(|&i| bundle.graphs[i].max_degree()).max().unwrap_or(0) + 1,
    };
    Ok((scheme, dim))
}

pub fn prepare_all(bundle: &DatasetBundle, scheme: FeatureScheme, dim: usize) -> Result<Vec<PreparedGraph>> {
    bundle.graphs.iter().map(|g| PreparedGraph::new(g, scheme, dim)).collect()
}

pub fn model_config(bundle: &DatasetBundle, config: &TrainConfig, scheme: FeatureScheme, dim: usize) -> Result<ModelConfig> {
    let mut m = ModelConfig::new(scheme, dim, bundle.max_node_count(), bundle.num_classes);
    m.encoder_dims = config.encoder_dims;
    m.keys = config.keys;
    m.lambdas = config.lambda_values()?;
    m.head_hidden = config.head_hidden;
    m.temperature = config.temperature;
    m.momentum = config.momentum;
    m.loss.beta = config.beta;
    m.loss.p_hat = config.p_hat;
    m.sinkhorn = config.sinkhorn;
    m.validate()?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub test_size: usize,
    pub test_accuracy: f64,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub wall_time: Duration,
}

/// Fraction of `graphs` whose first maximal class probability is the label.
pub fn accuracy(model: &Model, graphs: &[&PreparedGraph]) -> Result<f64> {
    if graphs.is_empty() {
        return Ok(0.0);
    }
    let out = model.predict(graphs)?;
    let hits = out.iter().zip(graphs).filter(|(d, g)| d.predicted_class() == g.label).count();
    Ok(hits as f64 / graphs.len() as f64)
}

/// Runs `epochs` of minibatch training in place; returns the mean loss per epoch.
pub fn train_model<R: Rng + ?Sized>(
    model: &mut Model,
    train: &[&PreparedGraph],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut state = AdamState::new(model.params.trainable().into_iter().map(|(_, _, m)| m));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PreparedGraph> = chunk.iter().map(|&i| train[i]).collect();
            let (loss, grads, _) = model.loss_and_gradients(&batch, ForwardMode::Train, rng, None)?;
            total += loss * batch.len() as f64;
            adam_step(&mut model.params.trainable_mut(), &grads, &mut state, &config.adam)?;
            model.params.momentum_update(model.config.momentum)?;
        }
        let mean = total / train.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        losses.push(mean);
    }
    Ok(losses)
}

/// Trains on everything outside `test` and scores `test`.
pub fn train_fold(bundle: &DatasetBundle, config: &TrainConfig, fold: usize, test: &[usize]) -> Result<(Model, FoldResult)> {
    let start = Instant::now();
    let train_idx: Vec<usize> = (0..bundle.graphs.len()).filter(|i| test.binary_search(i).is_err()).collect();
    let (scheme, dim) = resolve_features(bundle, config, &train_idx)?;
    let prepared = prepare_all(bundle, scheme, dim)?;
    let train: Vec<&PreparedGraph> = train_idx.iter().map(|&i| &prepared[i]).collect();
    let held_out: Vec<&PreparedGraph> = test.iter().map(|&i| &prepared[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(fold as u64 + 1);
    let dictionary_seed = rng.gen();
    let mut model = Model::init(model_config(bundle, config, scheme, dim)?, &train, dictionary_seed, &mut rng)?;
    let epoch_losses = train_model(&mut model, &train, config, &mut rng)?;
    let test_accuracy = accuracy(&model, &held_out)?;
    let result = FoldResult { fold, test_size: test.len(), test_accuracy, epoch_losses, wall_time: start.elapsed() };
    log::info!("fold {fold}: accuracy {test_accuracy:.4} in {:.1}s", result.wall_time.as_secs_f64());
    Ok((model, result))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub dataset: String,
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    /// Population standard deviation over folds.
    pub std_accuracy: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Stratified k-fold cross-validation. Folds run on `config.threads`
/// workers; results do not depend on the thread count.
pub fn run_cv(bundle: &DatasetBundle, config: &TrainConfig) -> Result<(CvReport, Vec<Model>)> {
    config.validate()?;
    let folds = stratified_folds(&bundle.labels(), config.folds, config.seed)?;
    let threads = match config.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        t => t,
    }
    .min(folds.len());

    let mut slots: Vec<Option<Result<(Model, FoldResult)>>> = (0..folds.len()).map(|_| None).collect();
    if threads <= 1 {
        for (k, test) in folds.iter().enumerate() {
            slots[k] = Some(train_fold(bundle, config, k, test));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let results = std::sync::Mutex::new(&mut slots);
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(|| loop {
                    let k = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if k >= folds.len() {
                        break;
                    }
                    let r = train_fold(bundle, config, k, &folds[k]);
                    results.lock().expect("fold result lock")[k] = Some(r);
                });
            }
        });
    }

    let mut models = Vec::with_capacity(folds.len());
    let mut results = Vec::with_capacity(folds.len());
    for (k, slot) in slots.into_iter().enumerate() {
        match slot.expect("every fold ran") {
            Ok((m, r)) => {
                models.push(m);
                results.push(r);
            }
            Err(e) => return Err(Error::Fold { fold: k, source: Box::new(e) }),
        }
    }
    let (mean_accuracy, std_accuracy) = mean_std(&results.iter().map(|r| r.test_accuracy).collect::<Vec<_>>());
    Ok((CvReport { dataset: bundle.name.clone(), folds: results, mean_accuracy, std_accuracy }, models))
}

impl CvReport {
    /// Per-fold accuracy and loss summary; contains no timings.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("fold,test_size,accuracy,first_epoch_loss,last_epoch_loss\n");
        for f in &self.folds {
            let first = f.epoch_losses.first().copied().unwrap_or(f64::NAN);
            let last = f.epoch_losses.last().copied().unwrap_or(f64::NAN);
            writeln!(s, "{},{},{},{},{}", f.fold, f.test_size, f.test_accuracy, first, last).expect("string write");
        }
        writeln!(s, "mean,,{},,", self.mean_accuracy).expect("string write");
        writeln!(s, "std,,{},,", self.std_accuracy).expect("string write");
        s
    }

    pub fn losses_csv(&self) -> String {
        let mut s = String::from("fold,epoch,loss\n");
        for f in &self.folds {
            for (e, l) in f.epoch_losses.iter().enumerate() {
                writeln!(s, "{},{},{}", f.fold, e, l).expect("string write");
            }
        }
        s
    }

    pub fn timings_csv(&self) -> String {
        let mut s = String::from("fold,seconds\n");
        for f in &self.folds {
            writeln!(s, "{},{:.3}", f.fold, f.wall_time.as_secs_f64()).expect("string write");
        }
        s
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<6} {:>6} {:>9} {:>11} {:>9}\n", "fold", "test", "accuracy", "final loss", "seconds");
        for f in &self.folds {
            writeln!(
                s,
                "{:<6} {:>6} {:>9.4} {:>11.5} {:>9.1}",
                f.fold,
                f.test_size,
                f.test_accuracy,
                f.epoch_losses.last().copied().unwrap_or(f64::NAN),
                f.wall_time.as_secs_f64()
            )
            .expect("string write");
        }
        writeln!(s, "{}: {:.2} ± {:.2} (%)", self.dataset, 100.0 * self.mean_accuracy, 100.0 * self.std_accuracy)
            .expect("string write");
        s
    }

    /// Writes `metrics.csv`, `losses.csv`, `timings.csv` and `summary.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("metrics.csv", self.metrics_csv()),
            ("losses.csv", self.losses_csv()),
            ("timings.csv", self.timings_csv()),
            ("summary.txt", self.table()),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Writes the report and one checkpoint per fold under `dir`.
pub fn write_run(dir: &Path, report: &CvReport, models: &[Model]) -> Result<()> {
    report.write(dir)?;
    for (k, m) in models.iter().enumerate() {
        checkpoint::save(m, &dir.join(format!("fold_{k}.ckpt")))?;
    }
    Ok(())
}
