use crate::OracleError;

pub const REFERENCE_MAX_ITER: usize = 10_000;
pub const REFERENCE_TOL: f64 = 1e-12;

/// High-precision entropic plan.
#[derive(Debug, Clone)]
pub struct ReferencePlan {
    /// Row-major plan entries, `plan[u][v]`.
    pub plan: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

impl ReferencePlan {
    pub fn cost(&self, cost: &[Vec<f64>]) -> f64 {
        self.plan
            .iter()
            .zip(cost)
            .map(|(pr, cr)| pr.iter().zip(cr).map(|(p, c)| p * c).sum::<f64>())
            .sum()
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic OT plan for kernel `exp(-lambda * cost)` computed entirely with
/// dual potentials in log space.
///
/// Runs at most 10⁴ sweeps and stops once the row-marginal violation (the
/// column marginals are exact after each sweep) drops below 1e-12.
pub fn reference_sinkhorn(cost: &[Vec<f64>], lambda: f64, a: &[f64], b: &[f64]) -> Result<ReferencePlan, OracleError> {
    let n = cost.len();
    if n == 0 || n != a.len() {
        return Err(OracleError::Input("row marginal length mismatch".into()));
    }
    let m = b.len();
    if m == 0 || cost.iter().any(|r| r.len() != m) {
        return Err(OracleError::Input("column marginal length mismatch".into()));
    }
    if !(lambda > 0.0) || a.iter().chain(b).any(|&x| !(x > 0.0)) {
        return Err(OracleError::Input("lambda and marginals must be positive".into()));
    }
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let scaled: Vec<Vec<f64>> = cost.iter().map(|r| r.iter().map(|c| -lambda * c).collect()).collect();

    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < REFERENCE_MAX_ITER {
        iterations += 1;
        for u in 0..n {
            f[u] = log_a[u] - log_sum_exp((0..m).map(|v| scaled[u][v] + g[v]));
        }
        for v in 0..m {
            g[v] = log_b[v] - log_sum_exp((0..n).map(|u| scaled[u][v] + f[u]));
        }
        let violation = (0..n)
            .map(|u| {
                let row: f64 = (0..m).map(|v| (scaled[u][v] + f[u] + g[v]).exp()).sum();
                (row - a[u]).abs()
            })
            .fold(0.0, f64::max);
        if !violation.is_finite() {
            return Err(OracleError::Numerics("reference sinkhorn"));
        }
        if violation < REFERENCE_TOL {
            converged = true;
            break;
        }
    }
    let plan = (0..n)
        .map(|u| (0..m).map(|v| (scaled[u][v] + f[u] + g[v]).exp()).collect())
        .collect();
    Ok(ReferencePlan { plan, iterations, converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one() {
        for &(lambda, c) in &[(0.001, 5.0), (100.0, 3.0), (1.0, 0.0)] {
            let p = reference_sinkhorn(&[vec![c]], lambda, &[1.0], &[1.0]).unwrap();
            assert!((p.plan[0][0] - 1.0).abs() < 1e-15);
            assert!(p.converged);
        }
    }

    #[test]
    fn zero_cost_gives_product_measure() {
        let cost = vec![vec![0.0; 4]; 3];
        let p = reference_sinkhorn(&cost, 10.0, &[1.0 / 3.0; 3], &[0.25; 4]).unwrap();
        for row in &p.plan {
            for &x in row {
                assert!((x - 1.0 / 12.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn large_lambda_does_not_underflow() {
        let cost = vec![vec![0.0, 50.0], vec![50.0, 0.0]];
        let p = reference_sinkhorn(&cost, 100.0, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert!(p.converged);
        assert!((p.plan[0][0] - 0.5).abs() < 1e-12);
        assert!(p.plan[0][1] >= 0.0);
    }

    #[test]
    fn rejects_bad_marginals() {
        assert!(reference_sinkhorn(&[vec![1.0]], 1.0, &[0.0], &[1.0]).is_err());
        assert!(reference_sinkhorn(&[vec![1.0, 2.0]], 1.0, &[1.0], &[1.0]).is_err());
    }
}
