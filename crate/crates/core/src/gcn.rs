//! Three-layer graph convolution encoders.
//!
//! The input branch is trained by backprop; the dictionary branch has the
//! same shapes and only moves by [`momentum_update`] towards the input
//! branch.

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Var};
use rand::Rng;

pub const DEFAULT_DIMS: [usize; 3] = [256, 128, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Trained by gradient descent.
    Input,
    /// Exponential moving average of the input branch.
    Dictionary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub weights: [Matrix; 3],
    pub branch: Branch,
}

/// Uniform in ±√(6/(fan_in+fan_out)).
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)).collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("sized")
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, input_dim: usize, dims: [usize; 3], branch: Branch) -> Self {
        let w1 = glorot_uniform(rng, input_dim, dims[0]);
        let w2 = glorot_uniform(rng, dims[0], dims[1]);
        let w3 = glorot_uniform(rng, dims[1], dims[2]);
        Self { weights: [w1, w2, w3], branch }
    }

    /// Copy with the other branch tag; used to start both encoders at parity.
    pub fn as_branch(&self, branch: Branch) -> Self {
        Self { weights: self.weights.clone(), branch }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[2].cols()
    }

    pub fn layer_dims(&self) -> [usize; 3] {
        [self.weights[0].cols(), self.weights[1].cols(), self.weights[2].cols()]
    }
}

/// `F = ReLU(Â·ReLU(Â·ReLU(Â·X·W₁)·W₂)·W₃)`.
pub fn encode<'t>(x: Var<'t>, a_hat: Var<'t>, weights: &[Var<'t>; 3]) -> Result<Var<'t>> {
    let n = a_hat.rows();
    if a_hat.cols() != n || x.rows() != n {
        return Err(Error::shape("encode", a_hat.shape(), x.shape()));
    }
    let mut h = x;
    for w in weights {
        h = a_hat.matmul(h.matmul(*w)?)?.relu()?;
    }
    Ok(h)
}

/// `w_dict ← m·w_dict + (1−m)·w_input` for every weight.
pub fn momentum_update(dict: &mut EncoderParams, input: &EncoderParams, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::Config(format!("momentum must lie in [0,1], got {m}")));
    }
    for (d, i) in dict.weights.iter().zip(&input.weights) {
        if d.shape() != i.shape() {
            return Err(Error::shape("momentum_update", d.shape(), i.shape()));
        }
    }
    for (d, i) in dict.weights.iter_mut().zip(&input.weights) {
        for (dv, &iv) in d.as_mut_slice().iter_mut().zip(i.as_slice()) {
            *dv = m * *dv + (1.0 - m) * iv;
        }
    }
    Ok(())
}
