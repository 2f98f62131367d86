use crate::batch::{dist_sq, StateBatch};
use crate::{GsbmError, Result};

/// Minimum-cost perfect assignment on a dense `n × n` cost matrix
/// (row-major), by shortest augmenting paths with dual potentials.
/// Returns `col_of_row`.
pub fn linear_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    // 1-based internal indexing; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0; n];
    for j in 1..=n {
        col_of_row[row_of[j] - 1] = j - 1;
    }
    col_of_row
}

/// Exact `W2` between two equal-size empirical measures.
pub fn wasserstein2(a: &StateBatch, b: &StateBatch) -> Result<f64> {
    if a.len() != b.len() || a.dim() != b.dim() {
        return Err(GsbmError::Contract(format!(
            "W2 needs equal sizes, got {}×{} and {}×{}",
            a.len(),
            a.dim(),
            b.len(),
            b.dim()
        )));
    }
    let n = a.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut cost = vec![0.0; n * n];
    for (i, x) in a.rows().enumerate() {
        for (j, y) in b.rows().enumerate() {
            cost[i * n + j] = dist_sq(x, y);
        }
    }
    let assign = linear_assignment(&cost, n);
    let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total / n as f64).max(0.0).sqrt())
}
