//! The full classifier: base graph dictionary, both encoders, adaptation,
//! multi-sensitivity encoding, attention, and the two-layer head.

use crate::error::{Error, Result};
use crate::gcn::{encode, glorot_uniform, Branch, EncoderParams, DEFAULT_DIMS};
use crate::graph::{featurize, normalize_adjacency, FeatureScheme, LabeledGraph};
use crate::mswe::{aggregate_attention, select_lambdas, wasserstein_embed_multi, SinkhornConfig, TransportPlan};
use crate::tensor::{Gradients, Matrix, Tape, Var};
use crate::vgda::{
    bernoulli_kl, relaxed_surrogate, sample_factor, sampling_probability, select_substructure, straight_through_gate,
    AdaptedKey, SampleMode, SamplingFactor, DEFAULT_P_HAT, DEFAULT_TEMPERATURE,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

pub const DEFAULT_KEYS: usize = 14;
pub const DEFAULT_HEAD_HIDDEN: usize = 64;
pub const DEFAULT_BETA: f64 = 0.001;
pub const DEFAULT_MOMENTUM: f64 = 0.999;
/// Floor applied to the true-class probability before the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Trade-off and prior of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub beta: f64,
    pub p_hat: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { beta: DEFAULT_BETA, p_hat: DEFAULT_P_HAT }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if !(self.p_hat > 0.0 && self.p_hat < 1.0) {
            return Err(Error::Config(format!("p_hat must lie in (0,1), got {}", self.p_hat)));
        }
        Ok(())
    }
}

/// Architecture and objective hyperparameters; everything needed to rebuild
/// a model from its tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub feature_scheme: FeatureScheme,
    pub input_dim: usize,
    /// Length of `w_r`: the largest node count an input may have.
    pub max_nodes: usize,
    pub num_classes: usize,
    pub encoder_dims: [usize; 3],
    pub keys: usize,
    pub lambdas: Vec<f64>,
    pub head_hidden: usize,
    pub temperature: f64,
    pub momentum: f64,
    pub loss: LossConfig,
    pub sinkhorn: SinkhornConfig,
}

impl ModelConfig {
    /// Defaults for a dataset shape; `C = 8` sensitivities, `K = 14` keys.
    pub fn new(feature_scheme: FeatureScheme, input_dim: usize, max_nodes: usize, num_classes: usize) -> Self {
        Self {
            feature_scheme,
            input_dim,
            max_nodes,
            num_classes,
            encoder_dims: DEFAULT_DIMS,
            keys: DEFAULT_KEYS,
            lambdas: select_lambdas(8).expect("8 is a valid count"),
            head_hidden: DEFAULT_HEAD_HIDDEN,
            temperature: DEFAULT_TEMPERATURE,
            momentum: DEFAULT_MOMENTUM,
            loss: LossConfig::default(),
            sinkhorn: SinkhornConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.input_dim == 0 || self.max_nodes == 0 || self.num_classes < 2 || self.keys == 0 || self.head_hidden == 0 {
            return Err(Error::Config("dimensions, keys and classes must be positive (at least 2 classes)".into()));
        }
        if self.encoder_dims.contains(&0) {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.lambdas.is_empty() || self.lambdas.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Config("sensitivities must be positive and finite".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0,1]".into()));
        }
        Ok(())
    }
}

/// Features and normalized adjacency of one graph, ready for encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedGraph {
    pub features: Matrix,
    pub adjacency: Matrix,
    pub label: usize,
}

impl PreparedGraph {
    pub fn new(graph: &LabeledGraph, scheme: FeatureScheme, dim: usize) -> Result<Self> {
        Ok(Self {
            features: featurize(graph, scheme, dim)?,
            adjacency: normalize_adjacency(&graph.adjacency_matrix()),
            label: graph.class_label(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.features.rows()
    }
}

/// One key of the base dictionary: trainable node features on a fixed,
/// already normalized adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryKey {
    pub features: Matrix,
    pub adjacency: Matrix,
    pub class_label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseGraphDictionary {
    pub keys: Vec<DictionaryKey>,
}

impl BaseGraphDictionary {
    pub fn from_graphs(graphs: &[&PreparedGraph]) -> Self {
        let keys = graphs
            .iter()
            .map(|g| DictionaryKey { features: g.features.clone(), adjacency: g.adjacency.clone(), class_label: g.label })
            .collect();
        Self { keys }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Picks `k` training positions for the dictionary.
///
/// Classes are visited in ascending order, round-robin, each drawing without
/// replacement from its own seeded shuffle; exhausted classes are skipped.
/// Returns positions into `labels`.
pub fn init_base_dictionary(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > labels.len() {
        return Err(Error::Config(format!("cannot draw {k} keys from {} training graphs", labels.len())));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools: Vec<std::vec::IntoIter<usize>> = by_class
        .into_values()
        .map(|mut v| {
            v.shuffle(&mut rng);
            v.into_iter()
        })
        .collect();
    let mut picked = Vec::with_capacity(k);
    while picked.len() < k {
        for pool in pools.iter_mut() {
            if picked.len() == k {
                break;
            }
            if let Some(i) = pool.next() {
                picked.push(i);
            }
        }
    }
    Ok(picked)
}

/// Two dense layers `K → hidden → classes` with a ReLU between.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl ClassifierHead {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, keys: usize, hidden: usize, classes: usize) -> Self {
        Self {
            w1: glorot_uniform(rng, keys, hidden),
            b1: Matrix::zeros(1, hidden),
            w2: glorot_uniform(rng, hidden, classes),
            b2: Matrix::zeros(1, classes),
        }
    }
}

/// Which optimizer group a trainable tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSet {
    /// The sampling projection `w_r`.
    Phi,
    /// Everything else that receives gradients.
    Psi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    /// `max_nodes × 1`.
    pub w_r: Matrix,
    pub input_encoder: EncoderParams,
    /// Momentum copy of `input_encoder`; never trained directly.
    pub dictionary_encoder: EncoderParams,
    pub dictionary: BaseGraphDictionary,
    /// `K × 1` attention projection.
    pub w_m: Matrix,
    pub head: ClassifierHead,
}

impl ModelParameters {
    /// Initializes every tensor from `rng`.
    ///
    /// `w_r` is drawn from `[0, √(6/(n+1))]`: nonnegative encoder outputs
    /// give nonnegative cosines, so an untrained model keeps whole keys.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, dictionary: BaseGraphDictionary, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if dictionary.len() != config.keys {
            return Err(Error::Config(format!("dictionary has {} keys, config expects {}", dictionary.len(), config.keys)));
        }
        if let Some(k) = dictionary.keys.iter().find(|k| k.features.cols() != config.input_dim) {
            return Err(Error::shape("dictionary features", k.features.shape(), (k.features.rows(), config.input_dim)));
        }
        let input_encoder = EncoderParams::init(rng, config.input_dim, config.encoder_dims, Branch::Input);
        let dictionary_encoder = input_encoder.as_branch(Branch::Dictionary);
        let limit = (6.0 / (config.max_nodes + 1) as f64).sqrt();
        let w_r = Matrix::column(&(0..config.max_nodes).map(|_| rng.gen_range(0.0..=limit)).collect::<Vec<_>>());
        let w_m = glorot_uniform(rng, config.keys, 1);
        let head = ClassifierHead::init(rng, config.keys, config.head_hidden, config.num_classes);
        Ok(Self { w_r, input_encoder, dictionary_encoder, dictionary, w_m, head })
    }

    /// Trainable tensors in a fixed order, with their names and groups.
    pub fn trainable(&self) -> Vec<(String, ParamSet, &Matrix)> {
        let mut out = vec![("w_r".to_string(), ParamSet::Phi, &self.w_r)];
        for (i, w) in self.input_encoder.weights.iter().enumerate() {
            out.push((format!("encoder.w{}", i + 1), ParamSet::Psi, w));
        }
        for (j, k) in self.dictionary.keys.iter().enumerate() {
            out.push((format!("dictionary.{j}.features"), ParamSet::Psi, &k.features));
        }
        out.push(("w_m".into(), ParamSet::Psi, &self.w_m));
        let h = &self.head;
        for (name, m) in [("head.w1", &h.w1), ("head.b1", &h.b1), ("head.w2", &h.w2), ("head.b2", &h.b2)] {
            out.push((name.into(), ParamSet::Psi, m));
        }
        out
    }

    /// Mutable view in the order of [`Self::trainable`].
    pub fn trainable_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.w_r];
        out.extend(self.input_encoder.weights.iter_mut());
        out.extend(self.dictionary.keys.iter_mut().map(|k| &mut k.features));
        out.push(&mut self.w_m);
        let h = &mut self.head;
        out.extend([&mut h.w1, &mut h.b1, &mut h.w2, &mut h.b2]);
        out
    }

    pub fn trainable_values(&self) -> Vec<Matrix> {
        self.trainable().into_iter().map(|(_, _, m)| m.clone()).collect()
    }

    /// Registers every trainable tensor on `tape` as a leaf.
    pub fn register<'t>(&self, tape: &'t Tape) -> Result<ParamVars<'t>> {
        let leaves = self.trainable().into_iter().map(|(_, _, m)| tape.param(m.clone())).collect::<Result<Vec<_>>>()?;
        ParamVars::from_leaves(leaves, self.dictionary.len())
    }

    /// Moves the dictionary encoder towards the input encoder.
    pub fn momentum_update(&mut self, momentum: f64) -> Result<()> {
        crate::gcn::momentum_update(&mut self.dictionary_encoder, &self.input_encoder, momentum)
    }
}

/// Tape leaves for the trainable tensors, in [`ModelParameters::trainable`] order.
#[derive(Debug, Clone)]
pub struct ParamVars<'t> {
    leaves: Vec<Var<'t>>,
    keys: usize,
}

impl<'t> ParamVars<'t> {
    pub fn from_leaves(leaves: Vec<Var<'t>>, keys: usize) -> Result<Self> {
        if leaves.len() != keys + 9 {
            return Err(Error::Config(format!("expected {} parameter leaves, got {}", keys + 9, leaves.len())));
        }
        Ok(Self { leaves, keys })
    }

    pub fn leaves(&self) -> &[Var<'t>] {
        &self.leaves
    }

    pub fn w_r(&self) -> Var<'t> {
        self.leaves[0]
    }

    pub fn encoder(&self) -> [Var<'t>; 3] {
        [self.leaves[1], self.leaves[2], self.leaves[3]]
    }

    pub fn dictionary_features(&self) -> &[Var<'t>] {
        &self.leaves[4..4 + self.keys]
    }

    pub fn w_m(&self) -> Var<'t> {
        self.leaves[4 + self.keys]
    }

    pub fn head(&self) -> [Var<'t>; 4] {
        let o = 5 + self.keys;
        [self.leaves[o], self.leaves[o + 1], self.leaves[o + 2], self.leaves[o + 3]]
    }

    /// Gradients for every leaf, zeros where nothing flowed.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Matrix> {
        self.leaves.iter().map(|v| grads.wrt(*v)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Relaxed sampling with straight-through masks.
    Train,
    /// Deterministic threshold `p > 0.5`.
    Eval,
    /// Every key node kept; probabilities and KL still computed.
    ForcedAllOnes,
    /// Adaptation removed: whole keys, no probabilities, zero KL.
    NoVgda,
}

/// Randomness and discrete choices of one key in one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyDraw {
    pub mask: Vec<bool>,
    pub noise: Option<Vec<f64>>,
    /// Stop-gradient term of the straight-through gate.
    pub offset: Option<Matrix>,
}

/// Everything non-differentiable a forward pass decided; replaying it makes
/// the pass a smooth function of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTrace {
    pub draws: Vec<Option<KeyDraw>>,
    /// Plans indexed `[key][lambda]`.
    pub plans: Vec<Vec<Matrix>>,
}

/// Plain-value record of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDiagnostics {
    /// Per key; `None` when adaptation is removed.
    pub sampling: Vec<Option<SamplingFactor>>,
    pub offsets: Vec<Option<Matrix>>,
    pub selected: Vec<Vec<usize>>,
    pub costs: Vec<Matrix>,
    /// Indexed `[key][lambda]`.
    pub plans: Vec<Vec<TransportPlan>>,
    pub lambdas: Vec<f64>,
    /// Indexed `[lambda][key]`.
    pub per_lambda: Vec<Vec<f64>>,
    pub attention: Vec<f64>,
    pub embedding: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub kl: f64,
}

impl GraphDiagnostics {
    pub fn trace(&self) -> GraphTrace {
        let draws = self
            .sampling
            .iter()
            .zip(&self.offsets)
            .map(|(s, o)| s.as_ref().map(|s| KeyDraw { mask: s.z.clone(), noise: s.noise.clone(), offset: o.clone() }))
            .collect();
        let plans = self.plans.iter().map(|k| k.iter().map(|p| p.plan.clone()).collect()).collect();
        GraphTrace { draws, plans }
    }

    /// Index of the first maximal class probability.
    pub fn predicted_class(&self) -> usize {
        argmax(&self.probabilities)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Tape outputs of one forward pass.
#[derive(Debug)]
pub struct GraphOutput<'t> {
    /// `1 × classes`.
    pub probabilities: Var<'t>,
    /// `1 × 1`, sum of per-key KL terms.
    pub kl_total: Var<'t>,
    /// Attention-fused `1 × K` embedding.
    pub embedding: Var<'t>,
    pub diagnostics: GraphDiagnostics,
}

/// `−log max(p[y], 1e-12) + β·KL`.
pub fn loss<'t>(probabilities: Var<'t>, label: usize, kl_total: Var<'t>, beta: f64) -> Result<Var<'t>> {
    if label >= probabilities.cols() {
        return Err(Error::shape("loss", probabilities.shape(), (1, label + 1)));
    }
    let nll = probabilities.element(0, label)?.clamp(PROB_FLOOR, 1.0)?.log()?.neg()?;
    nll.add(kl_total.scale(beta)?)
}

/// Encodes every dictionary key with the momentum encoder. The encoder
/// weights enter as constants; gradients reach only the key features.
pub fn encode_dictionary<'t>(params: &ModelParameters, vars: &ParamVars<'t>) -> Result<Vec<Var<'t>>> {
    let tape = vars.w_r().tape();
    let [w1, w2, w3] = &params.dictionary_encoder.weights;
    let weights = [tape.constant(w1.clone())?, tape.constant(w2.clone())?, tape.constant(w3.clone())?];
    params
        .dictionary
        .keys
        .iter()
        .zip(vars.dictionary_features())
        .map(|(key, &x)| encode(x, tape.constant(key.adjacency.clone())?, &weights))
        .collect()
}

/// Runs one graph through the model on an existing tape.
///
/// `dictionary` is the output of [`encode_dictionary`] on the same tape.
/// With `replay`, masks, noise, gate offsets and plans come from the trace
/// and `rng` is not touched.
#[allow(clippy::too_many_arguments)]
pub fn forward_graph<'t, R: Rng + ?Sized>(
    config: &ModelConfig,
    vars: &ParamVars<'t>,
    dictionary: &[Var<'t>],
    graph: &PreparedGraph,
    mode: ForwardMode,
    rng: &mut R,
    replay: Option<&GraphTrace>,
) -> Result<GraphOutput<'t>> {
    let tape = vars.w_r().tape();
    if graph.node_count() > config.max_nodes {
        return Err(Error::Config(format!("graph has {} nodes, model supports {}", graph.node_count(), config.max_nodes)));
    }
    if let Some(t) = replay {
        if t.draws.len() != dictionary.len() || t.plans.len() != dictionary.len() {
            return Err(Error::Config("trace does not match the dictionary size".into()));
        }
    }
    let f = encode(tape.constant(graph.features.clone())?, tape.constant(graph.adjacency.clone())?, &vars.encoder())?;

    let mut adapted: Vec<AdaptedKey<'t>> = Vec::with_capacity(dictionary.len());
    let mut sampling = Vec::with_capacity(dictionary.len());
    let mut offsets = Vec::with_capacity(dictionary.len());
    let mut kl_terms = Vec::with_capacity(dictionary.len());
    for (j, &key) in dictionary.iter().enumerate() {
        let draw = replay.and_then(|t| t.draws[j].as_ref());
        if mode == ForwardMode::NoVgda {
            adapted.push(AdaptedKey { key_id: j, indices: (0..key.rows()).collect(), features: key });
            sampling.push(None);
            offsets.push(None);
            continue;
        }
        let p_var = sampling_probability(f, key, config.w_r_view(vars)?)?;
        let p: Vec<f64> = p_var.value().as_slice().to_vec();
        kl_terms.push(bernoulli_kl(config.loss.p_hat, p_var)?);
        let (factor, gate, offset) = match mode {
            ForwardMode::Train => {
                let factor = match draw {
                    Some(d) => {
                        let noise = d.noise.clone().ok_or_else(|| Error::Config("train replay needs recorded noise".into()))?;
                        let relaxed = crate::vgda::relaxed_values(&p, &noise, config.temperature);
                        SamplingFactor { p, z: d.mask.clone(), relaxed: Some(relaxed), noise: Some(noise), p_hat: config.loss.p_hat }
                    }
                    None => sample_factor(&p, SampleMode::Train, config.temperature, config.loss.p_hat, rng)?,
                };
                let relaxed = relaxed_surrogate(p_var, factor.noise.as_deref().unwrap_or_default(), config.temperature)?;
                let (gate, offset) = straight_through_gate(relaxed, draw.and_then(|d| d.offset.as_ref()))?;
                (factor, Some(gate), Some(offset))
            }
            ForwardMode::Eval => {
                let mut factor = sample_factor(&p, SampleMode::Eval, config.temperature, config.loss.p_hat, rng)?;
                if let Some(d) = draw {
                    factor.z = d.mask.clone();
                }
                (factor, None, None)
            }
            ForwardMode::ForcedAllOnes => {
                let z = vec![true; p.len()];
                (SamplingFactor { p, z, relaxed: None, noise: None, p_hat: config.loss.p_hat }, None, None)
            }
            ForwardMode::NoVgda => unreachable!("handled above"),
        };
        adapted.push(select_substructure(j, key, &factor.z, gate)?);
        sampling.push(Some(factor));
        offsets.push(offset);
    }
    let kl_total = if kl_terms.is_empty() { tape.constant(Matrix::scalar(0.0))? } else { sum_all(&kl_terms)? };

    let frozen = replay.map(|t| t.plans.as_slice());
    let emb = wasserstein_embed_multi(f, &adapted, &config.lambdas, &config.sinkhorn, frozen)?;
    let (embedding, alpha) = aggregate_attention(&emb.per_lambda, vars.w_m())?;
    let [w1, b1, w2, b2] = vars.head();
    let hidden = embedding.matmul(w1)?.add_row(b1)?.relu()?;
    let probabilities = hidden.matmul(w2)?.add_row(b2)?.row_softmax()?;

    let diagnostics = GraphDiagnostics {
        sampling,
        offsets,
        selected: adapted.iter().map(|a| a.indices.clone()).collect(),
        costs: emb.costs,
        plans: emb.plans,
        lambdas: config.lambdas.clone(),
        per_lambda: emb.per_lambda.iter().map(|h| h.value().as_slice().to_vec()).collect(),
        attention: alpha.value().as_slice().to_vec(),
        embedding: embedding.value().as_slice().to_vec(),
        probabilities: probabilities.value().as_slice().to_vec(),
        kl: kl_total.scalar(),
    };
    Ok(GraphOutput { probabilities, kl_total, embedding, diagnostics })
}

fn sum_all<'t>(terms: &[Var<'t>]) -> Result<Var<'t>> {
    let mut acc = terms[0];
    for t in &terms[1..] {
        acc = acc.add(*t)?;
    }
    Ok(acc)
}

impl ModelConfig {
    fn w_r_view<'t>(&self, vars: &ParamVars<'t>) -> Result<Var<'t>> {
        let w = vars.w_r();
        if w.shape() != (self.max_nodes, 1) {
            return Err(Error::shape("w_r", w.shape(), (self.max_nodes, 1)));
        }
        Ok(w)
    }
}

/// A trained or freshly initialized classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParameters,
}

impl Model {
    /// Builds a model whose dictionary is seeded from `train` graphs.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, train: &[&PreparedGraph], dictionary_seed: u64, rng: &mut R) -> Result<Self> {
        let labels: Vec<usize> = train.iter().map(|g| g.label).collect();
        let picked = init_base_dictionary(&labels, config.keys, dictionary_seed)?;
        let chosen: Vec<&PreparedGraph> = picked.iter().map(|&i| train[i]).collect();
        let params = ModelParameters::init(&config, BaseGraphDictionary::from_graphs(&chosen), rng)?;
        Ok(Self { config, params })
    }

    /// Forward pass on a private tape, returning plain values.
    pub fn run<R: Rng + ?Sized>(&self, graph: &PreparedGraph, mode: ForwardMode, rng: &mut R) -> Result<GraphDiagnostics> {
        let tape = Tape::new();
        let vars = self.params.register(&tape)?;
        let dict = encode_dictionary(&self.params, &vars)?;
        Ok(forward_graph(&self.config, &vars, &dict, graph, mode, rng, None)?.diagnostics)
    }

    /// Deterministic predictions for `graphs`, sharing one dictionary encoding.
    pub fn predict(&self, graphs: &[&PreparedGraph]) -> Result<Vec<GraphDiagnostics>> {
        let tape = Tape::new();
        let vars = self.params.register(&tape)?;
        let dict = encode_dictionary(&self.params, &vars)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::with_capacity(graphs.len());
        for g in graphs {
            out.push(forward_graph(&self.config, &vars, &dict, g, ForwardMode::Eval, &mut rng, None)?.diagnostics);
        }
        Ok(out)
    }

    /// Mean loss over `graphs` and its gradient for every trainable tensor.
    ///
    /// With `replay`, one trace per graph is reused; the returned traces are
    /// the ones that were in effect.
    pub fn loss_and_gradients<R: Rng + ?Sized>(
        &self,
        graphs: &[&PreparedGraph],
        mode: ForwardMode,
        rng: &mut R,
        replay: Option<&[GraphTrace]>,
    ) -> Result<(f64, Vec<Matrix>, Vec<GraphTrace>)> {
        if graphs.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let tape = Tape::new();
        let vars = self.params.register(&tape)?;
        let (total, traces) = batch_loss(&self.config, &self.params, &vars, graphs, mode, rng, replay)?;
        let grads = total.backward()?;
        Ok((total.scalar(), vars.gradients(&grads), traces))
    }
}

/// Mean objective over a batch on an existing tape.
pub fn batch_loss<'t, R: Rng + ?Sized>(
    config: &ModelConfig,
    params: &ModelParameters,
    vars: &ParamVars<'t>,
    graphs: &[&PreparedGraph],
    mode: ForwardMode,
    rng: &mut R,
    replay: Option<&[GraphTrace]>,
) -> Result<(Var<'t>, Vec<GraphTrace>)> {
    if let Some(r) = replay {
        if r.len() != graphs.len() {
            return Err(Error::Config("one trace per graph is required".into()));
        }
    }
    let dict = encode_dictionary(params, vars)?;
    let mut losses = Vec::with_capacity(graphs.len());
    let mut traces = Vec::with_capacity(graphs.len());
    for (i, g) in graphs.iter().enumerate() {
        let out = forward_graph(config, vars, &dict, g, mode, rng, replay.map(|r| &r[i]))?;
        losses.push(loss(out.probabilities, g.label, out.kl_total, config.loss.beta)?);
        traces.push(out.diagnostics.trace());
    }
    Ok((sum_all(&losses)?.scale(1.0 / graphs.len() as f64)?, traces))
}
