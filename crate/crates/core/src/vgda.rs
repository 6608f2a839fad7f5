//! Variational graph dictionary adaptation.
//!
//! For every (input, key) pair a probability per key node is predicted from
//! the cross-graph cosine matrix, a binary node mask is drawn through a
//! binary-Concrete relaxation with a straight-through hard forward, and the
//! selected rows of the encoded key form the adapted key. The Bernoulli KL
//! towards the expected probability regularizes the predicted probabilities.

use crate::error::{Error, Result};
use crate::tensor::{cosine_matrix, Matrix, Var};
use rand::Rng;

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-6;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_P_HAT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Stochastic relaxed sampling with a straight-through hard mask.
    Train,
    /// Deterministic threshold `p > 0.5`.
    Eval,
}

/// Probability, mask and (train mode) surrogate for one (input, key) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingFactor {
    pub p: Vec<f64>,
    pub z: Vec<bool>,
    /// Relaxed values `z̃`, train mode only.
    pub relaxed: Option<Vec<f64>>,
    /// Uniform draws behind `relaxed`.
    pub noise: Option<Vec<f64>>,
    pub p_hat: f64,
}

impl SamplingFactor {
    pub fn selected(&self) -> Vec<usize> {
        mask_indices(&self.z)
    }
}

/// Key features restricted to the selected nodes.
#[derive(Debug, Clone)]
pub struct AdaptedKey<'t> {
    pub key_id: usize,
    pub indices: Vec<usize>,
    pub features: Var<'t>,
}

pub fn mask_indices(z: &[bool]) -> Vec<usize> {
    z.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

/// `p = clamp(σ(cos(F_i, F_key)ᵀ · w_r[..n_i]))` as an `n_d × 1` column.
///
/// `w_r` is sized for the largest input graph; using its first `n_i`
/// entries is the same as zero-padding `F_i` to that size and masking the
/// padded rows out of the cosine matrix.
pub fn sampling_probability<'t>(f_input: Var<'t>, f_key: Var<'t>, w_r: Var<'t>) -> Result<Var<'t>> {
    let n = f_input.rows();
    if w_r.cols() != 1 || w_r.rows() < n {
        return Err(Error::shape("sampling_probability", f_input.shape(), w_r.shape()));
    }
    let w = if w_r.rows() == n { w_r } else { w_r.row_select(&(0..n).collect::<Vec<_>>())? };
    let cos = cosine_matrix(f_input, f_key)?;
    cos.transpose()?.matmul(w)?.sigmoid()?.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Uniform draws in the open interval (0, 1).
pub fn draw_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let u: f64 = rng.gen();
            if u > 0.0 {
                break u;
            }
        })
        .collect()
}

fn logit(x: f64) -> f64 {
    x.ln() - (1.0 - x).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `z̃ = σ((logit p + logit u) / τ)` evaluated on plain values.
pub fn relaxed_values(p: &[f64], noise: &[f64], temperature: f64) -> Vec<f64> {
    p.iter().zip(noise).map(|(&p, &u)| sigmoid((logit(p) + logit(u)) / temperature)).collect()
}

/// `z̃ = σ((logit p + logit u) / τ)` on the tape, for an `n × 1` column `p`.
pub fn relaxed_surrogate<'t>(p: Var<'t>, noise: &[f64], temperature: f64) -> Result<Var<'t>> {
    if p.cols() != 1 || p.rows() != noise.len() {
        return Err(Error::shape("relaxed_surrogate", p.shape(), (noise.len(), 1)));
    }
    let tape = p.tape();
    let noise_logit = tape.constant(Matrix::column(&noise.iter().map(|&u| logit(u)).collect::<Vec<_>>()))?;
    let one_minus = p.neg()?.add_scalar(1.0)?;
    let logits = p.log()?.sub(one_minus.log()?)?.add(noise_logit)?;
    logits.scale(1.0 / temperature)?.sigmoid()
}

/// Hard mask `score > 0.5`; an all-zero mask falls back to the first
/// argmax of `p`.
pub fn threshold_with_fallback(scores: &[f64], p: &[f64]) -> Vec<bool> {
    let mut z: Vec<bool> = scores.iter().map(|&s| s > 0.5).collect();
    if !z.iter().any(|&b| b) && !p.is_empty() {
        let mut best = 0;
        for (i, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = i;
            }
        }
        z[best] = true;
    }
    z
}

/// Draws a node mask for probabilities `p`.
///
/// Train mode draws `u ~ U(0,1)` per node and thresholds the relaxed value;
/// eval mode thresholds `p` itself and consumes no randomness.
pub fn sample_factor<R: Rng + ?Sized>(
    p: &[f64],
    mode: SampleMode,
    temperature: f64,
    p_hat: f64,
    rng: &mut R,
) -> Result<SamplingFactor> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    if p.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
        return Err(Error::Numerics("sample_factor: probability outside (0,1)"));
    }
    Ok(match mode {
        SampleMode::Eval => SamplingFactor { p: p.to_vec(), z: threshold_with_fallback(p, p), relaxed: None, noise: None, p_hat },
        SampleMode::Train => {
            let noise = draw_noise(rng, p.len());
            let relaxed = relaxed_values(p, &noise, temperature);
            SamplingFactor {
                p: p.to_vec(),
                z: threshold_with_fallback(&relaxed, p),
                relaxed: Some(relaxed),
                noise: Some(noise),
                p_hat,
            }
        }
    })
}

/// Straight-through gate `z̃ + sg(1 − z̃)`: forward value 1 on every entry,
/// gradient identical to that of `z̃`.
///
/// `frozen` replaces the stop-gradient term with a previously recorded
/// value; the returned matrix is the term actually used.
pub fn straight_through_gate<'t>(relaxed: Var<'t>, frozen: Option<&Matrix>) -> Result<(Var<'t>, Matrix)> {
    let offset = match frozen {
        Some(m) => m.clone(),
        None => relaxed.value().map(|v| 1.0 - v),
    };
    let gate = relaxed.add(relaxed.tape().constant(offset.clone())?)?;
    Ok((gate, offset))
}

/// Rows of the encoded key where `z` is set, order preserved, each scaled by
/// its gate entry when a gate is given.
pub fn select_substructure<'t>(key_id: usize, key_features: Var<'t>, z: &[bool], gate: Option<Var<'t>>) -> Result<AdaptedKey<'t>> {
    if z.len() != key_features.rows() {
        return Err(Error::shape("select_substructure", key_features.shape(), (z.len(), 1)));
    }
    let indices = mask_indices(z);
    if indices.is_empty() {
        return Err(Error::Config("selection mask has no selected node".into()));
    }
    let all = indices.len() == z.len();
    let mut features = if all { key_features } else { key_features.row_select(&indices)? };
    if let Some(g) = gate {
        let g = if all { g } else { g.row_select(&indices)? };
        features = features.mul_col(g)?;
    }
    Ok(AdaptedKey { key_id, indices, features })
}

/// `Σ_u p̂·log(p̂/p_u) + (1−p̂)·log((1−p̂)/(1−p_u))` as a 1×1 value.
pub fn bernoulli_kl<'t>(p_hat: f64, p: Var<'t>) -> Result<Var<'t>> {
    if !(p_hat > 0.0 && p_hat < 1.0) {
        return Err(Error::Config(format!("expected probability must lie in (0,1), got {p_hat}")));
    }
    let constant = p_hat * p_hat.ln() + (1.0 - p_hat) * (1.0 - p_hat).ln();
    let log_p = p.log()?.scale(-p_hat)?;
    let log_q = p.neg()?.add_scalar(1.0)?.log()?.scale(-(1.0 - p_hat))?;
    log_p.add(log_q)?.add_scalar(constant)?.sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_projection_gives_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tape = Tape::new();
        let fi = tape.constant(random(&mut rng, 3, 32)).unwrap();
        let fk = tape.constant(random(&mut rng, 5, 32)).unwrap();
        let w = tape.constant(Matrix::zeros(4, 1)).unwrap();
        let p = sampling_probability(fi, fk, w).unwrap().to_matrix();
        assert_eq!(p.shape(), (5, 1));
        assert!(p.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn uniform_cosines_give_sigmoid_of_sum() {
        let tape = Tape::new();
        let fi = tape.constant(Matrix::filled(3, 4, 1.0)).unwrap();
        let fk = tape.constant(Matrix::filled(2, 4, 2.0)).unwrap();
        let a = 0.3;
        let w = tape.constant(Matrix::filled(3, 1, a)).unwrap();
        let p = sampling_probability(fi, fk, w).unwrap().to_matrix();
        let expected = 1.0 / (1.0 + (-(3.0 * a)).exp());
        for &v in p.as_slice() {
            assert!((v - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let fi = random(&mut rng, 3, 32);
        let fk = random(&mut rng, 2, 32);
        let wr: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tape = Tape::new();
        let p = sampling_probability(
            tape.constant(fi.clone()).unwrap(),
            tape.constant(fk.clone()).unwrap(),
            tape.constant(Matrix::column(&wr)).unwrap(),
        )
        .unwrap()
        .to_matrix();
        for v in 0..2 {
            let mut score = 0.0;
            for u in 0..3 {
                let (a, b) = (fi.row(u), fk.row(v));
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                score += dot / (na * nb + 1e-8) * wr[u];
            }
            let expected = 1.0 / (1.0 + (-score).exp());
            assert!((p[(v, 0)] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn padded_projection_ignores_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tape = Tape::new();
        let fi = tape.constant(random(&mut rng, 2, 4)).unwrap();
        let fk = tape.constant(random(&mut rng, 3, 4)).unwrap();
        let short = tape.constant(Matrix::column(&[0.4, -0.2])).unwrap();
        let long = tape.constant(Matrix::column(&[0.4, -0.2, 9.0, -9.0])).unwrap();
        assert_eq!(
            sampling_probability(fi, fk, short).unwrap().to_matrix(),
            sampling_probability(fi, fk, long).unwrap().to_matrix()
        );
        let too_short = tape.constant(Matrix::column(&[0.4])).unwrap();
        assert!(sampling_probability(fi, fk, too_short).is_err());
    }

    #[test]
    fn eval_threshold_and_fallback() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = sample_factor(&[0.7, 0.3], SampleMode::Eval, 1.0, 0.5, &mut rng).unwrap();
        assert_eq!(f.z, vec![true, false]);
        let f = sample_factor(&[0.1, 0.1], SampleMode::Eval, 1.0, 0.5, &mut rng).unwrap();
        assert_eq!(f.z, vec![true, false]);
        let f = sample_factor(&[0.1, 0.2, 0.2], SampleMode::Eval, 1.0, 0.5, &mut rng).unwrap();
        assert_eq!(f.z, vec![false, true, false]);
    }

    #[test]
    fn near_certain_probabilities_keep_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = vec![1.0 - 1e-6; 4];
        let mut all_ones = 0;
        for _ in 0..10_000 {
            let f = sample_factor(&p, SampleMode::Train, 1.0, 0.5, &mut rng).unwrap();
            if f.z.iter().all(|&b| b) {
                all_ones += 1;
            }
        }
        assert!(all_ones as f64 / 10_000.0 >= 1.0 - 1e-3);
    }

    #[test]
    fn train_mask_is_never_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..1000 {
            let f = sample_factor(&[0.01, 0.02, 0.01], SampleMode::Train, 1.0, 0.5, &mut rng).unwrap();
            assert!(f.z.iter().any(|&b| b));
        }
    }

    #[test]
    fn invalid_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_factor(&[0.5], SampleMode::Train, 0.0, 0.5, &mut rng).is_err());
        assert!(sample_factor(&[1.0], SampleMode::Train, 1.0, 0.5, &mut rng).is_err());
    }

    #[test]
    fn relaxed_surrogate_matches_plain_values() {
        let p = [0.2, 0.5, 0.9];
        let u = [0.3, 0.6, 0.01];
        let tape = Tape::new();
        let v = relaxed_surrogate(tape.constant(Matrix::column(&p)).unwrap(), &u, 1.0).unwrap();
        for (a, b) in v.value().as_slice().iter().zip(relaxed_values(&p, &u, 1.0)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn straight_through_forward_is_one_and_backward_is_relaxed() {
        let tape = Tape::new();
        let p = tape.param(Matrix::column(&[0.3, 0.8])).unwrap();
        let r = relaxed_surrogate(p, &[0.4, 0.7], 1.0).unwrap();
        let (gate, _) = straight_through_gate(r, None).unwrap();
        for &v in gate.value().as_slice() {
            assert!((v - 1.0).abs() < 1e-15);
        }
        let g_gate = gate.sum().unwrap().backward().unwrap().wrt(p);
        let g_relaxed = r.sum().unwrap().backward().unwrap().wrt(p);
        assert_eq!(g_gate, g_relaxed);
    }

    #[test]
    fn selection_examples() {
        let tape = Tape::new();
        let key = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let kv = tape.constant(key.clone()).unwrap();
        let all = select_substructure(0, kv, &[true; 3], None).unwrap();
        assert_eq!(all.features.to_matrix(), key);
        assert_eq!(all.indices, vec![0, 1, 2]);
        let some = select_substructure(1, kv, &[true, false, true], None).unwrap();
        assert_eq!(some.indices, vec![0, 2]);
        assert_eq!(some.features.to_matrix(), key.select_rows(&[0, 2]));
        assert!(select_substructure(0, kv, &[false; 3], None).is_err());
        assert!(select_substructure(0, kv, &[true; 2], None).is_err());
    }

    #[test]
    fn kl_examples() {
        let tape = Tape::new();
        let same = tape.constant(Matrix::column(&[0.5, 0.5, 0.5])).unwrap();
        assert_eq!(bernoulli_kl(0.5, same).unwrap().scalar(), 0.0);
        let same = tape.constant(Matrix::column(&[0.3; 4])).unwrap();
        assert_eq!(bernoulli_kl(0.3, same).unwrap().scalar(), 0.0);
        let p = tape.constant(Matrix::column(&[0.8])).unwrap();
        let expected = -(2.0f64).ln() - 0.5 * ((0.8f64).ln() + (0.2f64).ln());
        let kl = bernoulli_kl(0.5, p).unwrap().scalar();
        assert!((kl - expected).abs() < 1e-15);
        assert!((kl - 0.2231).abs() < 1e-4);
    }

    #[test]
    fn kl_is_additive() {
        let tape = Tape::new();
        let a = tape.constant(Matrix::column(&[0.1, 0.7])).unwrap();
        let b = tape.constant(Matrix::column(&[0.4, 0.95, 0.2])).unwrap();
        let both = tape.concat_rows(&[a, b]).unwrap();
        let sum = bernoulli_kl(0.5, a).unwrap().scalar() + bernoulli_kl(0.5, b).unwrap().scalar();
        assert!((bernoulli_kl(0.5, both).unwrap().scalar() - sum).abs() < 1e-14);
    }

    #[test]
    fn kl_gradient_matches_closed_form() {
        let tape = Tape::new();
        let p = tape.param(Matrix::column(&[0.3])).unwrap();
        let g = bernoulli_kl(0.5, p).unwrap().backward().unwrap().wrt(p);
        let expected = 0.5 * (-1.0 / 0.3 + 1.0 / 0.7);
        assert!((g.as_slice()[0] - expected).abs() < 1e-12);
    }
}
