use crate::OracleError;

pub const MAX_ENUMERATION: usize = 6;

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Minimum of `(1/n) * sum_u cost[u][sigma(u)]` over all permutations.
///
/// With uniform marginals on a square problem this is the exact
/// unregularized OT cost (Birkhoff: some optimal plan is a permutation).
pub fn exact_ot_by_enumeration(cost: &[Vec<f64>]) -> Result<f64, OracleError> {
    let n = cost.len();
    if n > MAX_ENUMERATION {
        return Err(OracleError::Size { n, max: MAX_ENUMERATION });
    }
    if n == 0 || cost.iter().any(|r| r.len() != n) {
        return Err(OracleError::Input("cost matrix must be square and nonempty".into()));
    }
    let best = permutations(n)
        .iter()
        .map(|sigma| sigma.iter().enumerate().map(|(u, &v)| cost[u][v]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    Ok(best / n as f64)
}

/// Rows of `rows` whose mask bit is set, in original order.
pub fn select_rows_brute_force(rows: &[Vec<f64>], mask: &[bool]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        if mask[i] {
            out.push(row.clone());
        }
    }
    out
}
