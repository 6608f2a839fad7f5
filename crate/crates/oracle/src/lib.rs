//! Reference computations used to check the main implementation.
//!
//! Nothing in here shares numerical code with the `ssgde` crate: the
//! Sinkhorn solver is an independent log-domain implementation, the exact
//! OT bound enumerates permutations, and gradients are estimated by central
//! differences over plain `f64` slices.

use std::fmt;
use std::io::{self, Write};

mod enumerate;
mod finite_diff;
mod sinkhorn;

pub use enumerate::{exact_ot_by_enumeration, permutations, select_rows_brute_force};
pub use finite_diff::{central_difference, finite_difference_gradient, relative_error};
pub use sinkhorn::{reference_sinkhorn, ReferencePlan};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OracleError {
    #[error("closure is not deterministic: {first} != {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("enumeration limited to n <= {max}, got {n}")]
    Size { n: usize, max: usize },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("non-finite value in {0}")]
    Numerics(&'static str),
}

/// Closed-form KL divergence between Bernoulli(`p_hat`) and Bernoulli(`p`).
pub fn bernoulli_kl_closed_form(p_hat: f64, p: f64) -> f64 {
    p_hat * (p_hat / p).ln() + (1.0 - p_hat) * ((1.0 - p_hat) / (1.0 - p)).ln()
}

/// Derivative of [`bernoulli_kl_closed_form`] with respect to `p`.
pub fn bernoulli_kl_derivative(p_hat: f64, p: f64) -> f64 {
    -p_hat / p + (1.0 - p_hat) / (1.0 - p)
}

/// Outcome of one oracle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub name: String,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl OracleReport {
    /// Builds a report that passes when `error` is below `tolerance`.
    pub fn new(name: impl Into<String>, max_abs_error: f64, max_rel_error: f64, error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            max_abs_error,
            max_rel_error,
            tolerance,
            passed: error.is_finite() && error <= tolerance,
        }
    }

    pub const CSV_HEADER: &'static str = "name,max_abs_error,max_rel_error,tolerance,passed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{}",
            self.name, self.max_abs_error, self.max_rel_error, self.tolerance, self.passed
        )
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {} (abs {:.3e}, rel {:.3e}, tol {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_abs_error,
            self.max_rel_error,
            self.tolerance
        )
    }
}

/// Writes reports as CSV with a header line.
pub fn write_reports_csv<W: Write>(mut out: W, reports: &[OracleReport]) -> io::Result<()> {
    writeln!(out, "{}", OracleReport::CSV_HEADER)?;
    for r in reports {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}
