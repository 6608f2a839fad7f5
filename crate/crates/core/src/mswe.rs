//! Multi-sensitivity Wasserstein encoding.
//!
//! Each adapted key is compared with the input through entropic OT at several
//! sensitivities λ. The plan is solved by Sinkhorn scaling and then treated as
//! a constant, so gradients reach the node features only through the cost
//! matrix. The per-λ embeddings are fused with a softmax attention.

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Var};
use crate::vgda::AdaptedKey;

/// Sensitivity values swept by the ablation grid.
pub const LAMBDA_GRID: [f64; 12] = [0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0, 3.0, 5.0, 10.0, 20.0, 100.0];

/// The eight sensitivities used by default (grid minus 0.005, 0.05, 3, 20).
pub const DEFAULT_LAMBDAS: [f64; 8] = [0.001, 0.01, 0.1, 0.5, 1.0, 5.0, 10.0, 100.0];

/// Picks `c` sensitivities from [`LAMBDA_GRID`].
///
/// `c = 8` gives [`DEFAULT_LAMBDAS`], `c = 1` gives λ = 1, anything else
/// takes evenly spaced grid positions including both ends.
pub fn select_lambdas(c: usize) -> Result<Vec<f64>> {
    match c {
        0 => Err(Error::Config("at least one sensitivity is required".into())),
        1 => Ok(vec![1.0]),
        8 => Ok(DEFAULT_LAMBDAS.to_vec()),
        c if c <= LAMBDA_GRID.len() => {
            let last = (LAMBDA_GRID.len() - 1) as f64;
            Ok((0..c).map(|i| LAMBDA_GRID[(i as f64 * last / (c - 1) as f64).round() as usize]).collect())
        }
        c => Err(Error::Config(format!("at most {} sensitivities available, got {c}", LAMBDA_GRID.len()))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub max_iter: usize,
    /// Stop once the largest row-marginal violation is below this.
    pub tol: f64,
    /// Switch to stabilized log-domain scaling when `λ·max(M)` exceeds this.
    pub log_domain_threshold: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-6, log_domain_threshold: 30.0 }
    }
}

/// Entropic transport plan with solver bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub plan: Matrix,
    pub lambda: f64,
    pub iterations_used: usize,
    pub converged: bool,
    pub log_domain: bool,
}

impl TransportPlan {
    /// Frobenius inner product with `cost`.
    pub fn cost(&self, cost: &Matrix) -> f64 {
        self.plan.as_slice().iter().zip(cost.as_slice()).map(|(t, m)| t * m).sum()
    }
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Pairwise squared Euclidean distances between input and key node features.
pub fn cost_matrix<'t>(f_input: Var<'t>, f_key: Var<'t>) -> Result<Var<'t>> {
    if f_input.rows() == 0 || f_key.rows() == 0 {
        return Err(Error::shape("cost_matrix", f_input.shape(), f_key.shape()));
    }
    f_input.sq_dist(f_key)
}

/// Absolute log-scaling beyond which the stabilized solver folds `u`, `v`
/// into the potentials and rebuilds the kernel.
const ABSORB_LOG_BOUND: f64 = 50.0;

/// Solves `min ⟨T,M⟩ − H(T)/λ` subject to `T·1 = a`, `Tᵀ·1 = b`.
///
/// Alternates `u ← a ⁄ (K v)` and `v ← b ⁄ (Kᵀ u)` with `K = exp(−λM)` from
/// `u = v = 1`. When `λ·max(M)` is large the kernel is kept as
/// `exp(−λM + α ⊕ β)` with log-potentials `α`, `β` that absorb the scalings
/// whenever they leave `[e^-50, e^50]`, so no entry underflows to a zero row
/// or column.
pub fn sinkhorn(cost: &Matrix, lambda: f64, a: &[f64], b: &[f64], config: &SinkhornConfig) -> Result<TransportPlan> {
    let (n, m) = cost.shape();
    if n == 0 || m == 0 || a.len() != n || b.len() != m {
        return Err(Error::shape("sinkhorn", cost.shape(), (a.len(), b.len())));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("sensitivity must be positive, got {lambda}")));
    }
    if a.iter().chain(b).any(|&x| !(x > 0.0)) {
        return Err(Error::Config("marginals must be strictly positive".into()));
    }
    let scaled = cost.map(|c| -lambda * c);
    let log_domain = lambda * cost.max_abs() > config.log_domain_threshold;

    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; m];
    if log_domain {
        // shift so every row and column of the kernel has a unit entry
        for u in 0..n {
            alpha[u] = -scaled.row(u).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        for v in 0..m {
            beta[v] = -(0..n).map(|u| scaled[(u, v)] + alpha[u]).fold(f64::NEG_INFINITY, f64::max);
        }
    }
    let build_kernel = |alpha: &[f64], beta: &[f64]| -> Matrix {
        let mut k = scaled.clone();
        for u in 0..n {
            for (v, e) in k.row_mut(u).iter_mut().enumerate() {
                *e = (*e + alpha[u] + beta[v]).exp();
            }
        }
        k
    };
    let mut kernel = build_kernel(&alpha, &beta);
    let mut scale_u = vec![1.0; n];
    let mut scale_v = vec![1.0; m];
    let mut kv = vec![0.0; n];
    let mut ktu = vec![0.0; m];

    let mut converged = false;
    let mut iterations = 0;
    loop {
        for u in 0..n {
            kv[u] = kernel.row(u).iter().zip(&scale_v).map(|(k, s)| k * s).sum();
        }
        if iterations > 0 {
            let violation = (0..n).map(|u| (scale_u[u] * kv[u] - a[u]).abs()).fold(0.0, f64::max);
            if !violation.is_finite() {
                return Err(Error::Numerics("sinkhorn scaling"));
            }
            if violation < config.tol {
                converged = true;
                break;
            }
        }
        if iterations == config.max_iter {
            break;
        }
        iterations += 1;
        for u in 0..n {
            scale_u[u] = a[u] / kv[u];
        }
        ktu.iter_mut().for_each(|x| *x = 0.0);
        for u in 0..n {
            let su = scale_u[u];
            for (acc, k) in ktu.iter_mut().zip(kernel.row(u)) {
                *acc += k * su;
            }
        }
        for v in 0..m {
            scale_v[v] = b[v] / ktu[v];
        }
        if scale_u.iter().chain(&scale_v).any(|s| !s.is_finite()) {
            return Err(Error::Numerics("sinkhorn scaling"));
        }
        if log_domain && scale_u.iter().chain(&scale_v).any(|s| s.ln().abs() > ABSORB_LOG_BOUND) {
            for u in 0..n {
                alpha[u] += scale_u[u].ln();
                scale_u[u] = 1.0;
            }
            for v in 0..m {
                beta[v] += scale_v[v].ln();
                scale_v[v] = 1.0;
            }
            kernel = build_kernel(&alpha, &beta);
        }
    }

    let mut plan = kernel;
    for u in 0..n {
        let su = scale_u[u];
        for (e, sv) in plan.row_mut(u).iter_mut().zip(&scale_v) {
            *e *= su * sv;
        }
    }
    if !plan.is_finite() {
        return Err(Error::Numerics("sinkhorn plan"));
    }
    if !converged {
        log::warn!("sinkhorn did not converge: λ={lambda}, {n}x{m}, {iterations} iterations");
    }
    Ok(TransportPlan { plan, lambda, iterations_used: iterations, converged, log_domain })
}

/// Per-λ embeddings of one input against an adapted dictionary.
#[derive(Debug)]
pub struct WassersteinEmbedding<'t> {
    /// One `1 × K` row per sensitivity.
    pub per_lambda: Vec<Var<'t>>,
    /// Cost matrix values per key.
    pub costs: Vec<Matrix>,
    /// Plans indexed `[key][lambda]`.
    pub plans: Vec<Vec<TransportPlan>>,
}

/// Computes `h^λ[j] = ⟨T_j^λ, M_j⟩` for every key `j` and every λ.
///
/// The plans enter as constants. `frozen` supplies previously solved plans
/// (`[key][lambda]`) instead of running the solver.
pub fn wasserstein_embed_multi<'t>(
    f_input: Var<'t>,
    keys: &[AdaptedKey<'t>],
    lambdas: &[f64],
    config: &SinkhornConfig,
    frozen: Option<&[Vec<Matrix>]>,
) -> Result<WassersteinEmbedding<'t>> {
    if keys.is_empty() || lambdas.is_empty() {
        return Err(Error::Config("embedding needs at least one key and one sensitivity".into()));
    }
    let tape = f_input.tape();
    let a = uniform(f_input.rows());
    let mut entries: Vec<Vec<Var<'t>>> = vec![Vec::with_capacity(keys.len()); lambdas.len()];
    let mut costs = Vec::with_capacity(keys.len());
    let mut plans = Vec::with_capacity(keys.len());
    for (j, key) in keys.iter().enumerate() {
        let m_var = cost_matrix(f_input, key.features)?;
        let m_val = m_var.to_matrix();
        let b = uniform(m_val.cols());
        let mut key_plans = Vec::with_capacity(lambdas.len());
        for (l, &lambda) in lambdas.iter().enumerate() {
            let plan = match frozen {
                Some(f) => {
                    let p = f[j][l].clone();
                    if p.shape() != m_val.shape() {
                        return Err(Error::shape("frozen plan", p.shape(), m_val.shape()));
                    }
                    TransportPlan { plan: p, lambda, iterations_used: 0, converged: true, log_domain: false }
                }
                None => sinkhorn(&m_val, lambda, &a, &b, config)?,
            };
            let t = tape.constant(plan.plan.clone())?;
            entries[l].push(m_var.mul(t)?.sum()?);
            key_plans.push(plan);
        }
        costs.push(m_val);
        plans.push(key_plans);
    }
    let per_lambda = entries.iter().map(|row| tape.concat_cols(row)).collect::<Result<Vec<_>>>()?;
    Ok(WassersteinEmbedding { per_lambda, costs, plans })
}

/// Single-sensitivity embedding: a `1 × K` row.
pub fn wasserstein_embed<'t>(
    f_input: Var<'t>,
    keys: &[AdaptedKey<'t>],
    lambda: f64,
    config: &SinkhornConfig,
) -> Result<Var<'t>> {
    Ok(wasserstein_embed_multi(f_input, keys, &[lambda], config, None)?.per_lambda[0])
}

/// Softmax attention over sensitivities.
///
/// Returns `(ĥ, α)` with `ĥ` of shape `1 × K` and `α` of shape `1 × C`,
/// where `α = softmax_j(h^{λ_j} · w_m)` and `ĥ = Σ_j α_j h^{λ_j}`.
pub fn aggregate_attention<'t>(h_list: &[Var<'t>], w_m: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let first = h_list.first().ok_or_else(|| Error::Config("no embeddings to aggregate".into()))?;
    let tape = first.tape();
    let stacked = tape.concat_rows(h_list)?; // C × K
    if w_m.shape() != (stacked.cols(), 1) {
        return Err(Error::shape("aggregate_attention", stacked.shape(), w_m.shape()));
    }
    let alpha = stacked.matmul(w_m)?.transpose()?.row_softmax()?; // 1 × C
    let fused = alpha.matmul(stacked)?;
    Ok((fused, alpha))
}
