//! Minimum-cost assignment (Kuhn–Munkres with potentials, O(n³)).

use crate::error::{Error, Result};

/// Optimal one-to-one assignment for a rectangular cost matrix.
///
/// Returns `(row, column)` pairs sorted by row; `min(rows, cols)` pairs in
/// total. Rectangular input is padded with a constant larger than any real
/// cost, so padding never displaces a real pair.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
    let rows = cost.len();
    if rows == 0 {
        return Ok(Vec::new());
    }
    let cols = cost[0].len();
    if cost.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape("cost matrix rows differ in length".into()));
    }
    if cols == 0 {
        return Ok(Vec::new());
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cost matrix entries must be finite".into()));
    }
    let n = rows.max(cols);
    let (lo, hi) = cost
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| (lo.min(c), hi.max(c)));
    let pad = hi + (hi - lo) + 1.0;
    let at = |i: usize, j: usize| if i < rows && j < cols { cost[i][j] } else { pad };

    // 1-based potentials formulation; p[j] is the row matched to column j
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
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
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter(|&j| p[j] != 0 && p[j] - 1 < rows && j - 1 < cols)
        .map(|j| (p[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    Ok(pairs)
}

pub fn assignment_cost(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| cost[i][j]).sum()
}
