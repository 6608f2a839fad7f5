//! Dense matrices and the reverse-mode tape that defines every gradient in
//! the model.

mod matrix;
mod tape;

pub use matrix::Matrix;
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

/// Denominator guard for cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;

/// Denominator floor used when turning absolute gradient errors into
/// relative ones; keeps near-zero coordinates from dominating the report.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Cosine similarity between every row of `a` and every row of `b`.
pub fn cosine_matrix<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    a.cosine(b, COSINE_EPS)
}

/// Comparison of tape gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
}

/// Checks the tape gradient of `closure` at `params` against central
/// differences with step `eps`.
///
/// The closure receives a fresh tape and one trainable leaf per parameter
/// matrix and must return a 1×1 output.
pub fn grad_check<F>(closure: F, params: &[Matrix], eps: f64) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let leaves = params.iter().map(|p| tape.param(p.clone())).collect::<Result<Vec<_>>>()?;
    let out = closure(&tape, &leaves)?;
    let grads = out.backward()?;
    let analytic: Vec<f64> = leaves.iter().flat_map(|l| grads.wrt(*l).into_vec()).collect();

    let flat: Vec<f64> = params.iter().flat_map(|p| p.as_slice().iter().copied()).collect();
    let evaluate = |x: &[f64]| -> f64 {
        let tape = Tape::new();
        let mut offset = 0;
        let mut leaves = Vec::with_capacity(params.len());
        for p in params {
            let m = Matrix::from_vec(p.rows(), p.cols(), x[offset..offset + p.len()].to_vec()).expect("shape");
            offset += p.len();
            match tape.constant(m) {
                Ok(v) => leaves.push(v),
                Err(_) => return f64::NAN,
            }
        }
        closure(&tape, &leaves).map(|v| v.scalar()).unwrap_or(f64::NAN)
    };
    let numeric = ssgde_oracle::finite_difference_gradient(evaluate, &flat, eps)?;
    if numeric.len() != analytic.len() {
        return Err(Error::shape("grad_check", (analytic.len(), 1), (numeric.len(), 1)));
    }
    let mut max_abs_error: f64 = 0.0;
    let mut max_rel_error: f64 = 0.0;
    for (a, n) in analytic.iter().zip(&numeric) {
        max_abs_error = max_abs_error.max((a - n).abs());
        max_rel_error = max_rel_error.max(ssgde_oracle::relative_error(*a, *n, GRAD_CHECK_FLOOR));
    }
    Ok(GradCheck { analytic, numeric, max_abs_error, max_rel_error })
}

#[cfg(test)]
mod tests;
