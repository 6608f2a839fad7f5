use crate::OracleError;

/// Central difference of a scalar function at `x`.
pub fn central_difference<F: Fn(f64) -> f64>(f: F, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

/// Estimates the gradient of `closure` at `params` by central differences.
///
/// The closure is evaluated twice at the unperturbed point first; if the two
/// values differ in any bit the closure is rejected as non-deterministic.
pub fn finite_difference_gradient<F>(closure: F, params: &[f64], eps: f64) -> Result<Vec<f64>, OracleError>
where
    F: Fn(&[f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(OracleError::Input(format!("epsilon must be positive, got {eps}")));
    }
    let first = closure(params);
    let second = closure(params);
    if first.to_bits() != second.to_bits() {
        return Err(OracleError::NonDeterministic { first, second });
    }
    if !first.is_finite() {
        return Err(OracleError::Numerics("closure value"));
    }
    let mut point = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = point[i];
        point[i] = orig + eps;
        let plus = closure(&point);
        point[i] = orig - eps;
        let minus = closure(&point);
        point[i] = orig;
        let g = (plus - minus) / (2.0 * eps);
        if !g.is_finite() {
            return Err(OracleError::Numerics("finite difference"));
        }
        grad.push(g);
    }
    Ok(grad)
}

/// Symmetric relative error with an absolute floor on the denominator.
///
/// Coordinates where both values are below `floor` in magnitude are compared
/// on an absolute scale of `floor`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
