//! Minimum-cost linear sum assignment (Hungarian method with potentials).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// An optimal assignment of every row to a distinct column.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `row_to_col[i]` is the column assigned to row `i`.
    pub row_to_col: Vec<usize>,
    /// Total cost, summed in row order.
    pub cost: f64,
}

struct Solution {
    row_to_col: Vec<usize>,
    /// Row potentials.
    u: Vec<f64>,
    /// Column potentials.
    v: Vec<f64>,
}

/// O(n^2 m) shortest-augmenting-path Hungarian algorithm for `n <= m`.
fn hungarian(cost: &DMatrix<f64>) -> Solution {
    let (n, m) = cost.shape();
    debug_assert!(n <= m);
    // 1-based with a virtual column 0, following the classic formulation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut col_owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0;
        let mut min_v = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if reduced < min_v[j] {
                    min_v[j] = reduced;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=m {
        if col_owner[j] != 0 {
            row_to_col[col_owner[j] - 1] = j - 1;
        }
    }
    Solution {
        row_to_col,
        u: u[1..].to_vec(),
        v: v[1..].to_vec(),
    }
}

fn total(cost: &DMatrix<f64>, row_to_col: &[usize]) -> f64 {
    row_to_col
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[(i, j)])
        .sum()
}

/// Optimal cost of assigning `rows` into `cols` (both index lists into `cost`).
fn sub_optimum(cost: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let sub = cost.select_rows(rows).select_columns(cols);
    let sol = hungarian(&sub);
    total(&sub, &sol.row_to_col)
}

/// Solves `min_σ Σ_i cost[i, σ(i)]` over injective `σ` for an `n x m` cost
/// matrix with `n <= m`.
///
/// Among optimal assignments (up to a relative tolerance of 1e-12) the
/// lexicographically smallest `row_to_col` sequence is returned.
pub fn linear_sum_assignment(cost: &DMatrix<f64>) -> Result<Assignment> {
    let (n, m) = cost.shape();
    if n > m {
        return Err(Error::Cardinality(format!(
            "cost matrix has {n} rows but only {m} columns"
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("assignment cost matrix".into()));
    }
    if n == 0 {
        return Ok(Assignment {
            row_to_col: Vec::new(),
            cost: 0.0,
        });
    }

    let sol = hungarian(cost);
    let optimum = total(cost, &sol.row_to_col);
    let scale = cost.iter().fold(optimum.abs(), |acc, c| acc.max(c.abs()));
    let tie_tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    // Edges of any optimal assignment are tight against optimal potentials;
    // the filter is loose and each candidate is re-verified below.
    let tight_tol = 1e-9 * scale.max(f64::MIN_POSITIVE);

    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    let mut used = vec![false; m];
    let mut prefix = 0.0;
    for i in 0..n {
        let rest_rows: Vec<usize> = (i + 1..n).collect();
        let mut best: Option<(usize, f64)> = None;
        for j in 0..m {
            if used[j] || cost[(i, j)] - sol.u[i] - sol.v[j] > tight_tol {
                continue;
            }
            let rest_cols: Vec<usize> = (0..m).filter(|&c| !used[c] && c != j).collect();
            let candidate = prefix + cost[(i, j)] + sub_optimum(cost, &rest_rows, &rest_cols);
            if candidate <= optimum + tie_tol {
                best = Some((j, candidate));
                break;
            }
            if best.is_none_or(|(_, c)| candidate < c) {
                best = Some((j, candidate));
            }
        }
        let j = best.map(|(j, _)| j).unwrap_or(sol.row_to_col[i]);
        used[j] = true;
        prefix += cost[(i, j)];
        chosen.push(j);
    }

    let cost_chosen = total(cost, &chosen);
    // Never return something worse than the plain Hungarian answer.
    if cost_chosen > optimum + tie_tol {
        return Ok(Assignment {
            row_to_col: sol.row_to_col,
            cost: optimum,
        });
    }
    Ok(Assignment {
        row_to_col: chosen,
        cost: cost_chosen,
    })
}
