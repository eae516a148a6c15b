use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Injective GT-to-query assignment with its total cost.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// `assignment[g]` is the query matched to ground-truth instance `g`.
    pub assignment: Vec<usize>,
    pub total_cost: f64,
}

impl MatchResult {
    /// Ground-truth index matched to each query, if any.
    pub fn query_targets(&self, num_queries: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; num_queries];
        for (g, &q) in self.assignment.iter().enumerate() {
            out[q] = Some(g);
        }
        out
    }
}

/// Shortest-augmenting-path assignment over rows `0..n` of an `n×m` cost
/// matrix (`n ≤ m`). `fixed[g]` pins row `g` to a single column.
fn solve(cost: &[f64], n: usize, m: usize, fixed: &[Option<usize>]) -> Vec<usize> {
    const BIG: f64 = 1e300;
    let c = |g: usize, q: usize| match fixed[g] {
        Some(only) if only != q => BIG,
        _ => cost[g * m + q],
    };
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

fn total(cost: &[f64], m: usize, assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(g, &q)| cost[g * m + q]).sum()
}

/// Minimum-cost injective assignment of rows (ground truth) to columns
/// (queries). Among optimal assignments the one whose query list is
/// lexicographically smallest is returned.
pub fn hungarian_match(cost: &Tensor) -> Result<MatchResult> {
    let (n, m) = match cost.shape() {
        [n, m] => (*n, *m),
        s => return Err(Error::contract(format!("cost matrix must be 2-D, got shape {s:?}"))),
    };
    if n > m {
        return Err(Error::contract(format!("{n} ground-truth instances but only {m} queries")));
    }
    if !cost.all_finite() {
        return Err(Error::contract("cost matrix has non-finite entries"));
    }
    let c = cost.data();
    if n == 0 {
        return Ok(MatchResult {
            assignment: Vec::new(),
            total_cost: 0.0,
        });
    }
    let best = total(c, m, &solve(c, n, m, &vec![None; n]));
    let scale = c.iter().fold(1.0f64, |a, &x| a.max(x.abs()));
    let tol = 1e-9 * scale * n as f64;
    // Pin rows one at a time to the lowest column that keeps the optimum.
    let mut fixed = vec![None; n];
    let mut taken = vec![false; m];
    for g in 0..n {
        for q in 0..m {
            if taken[q] {
                continue;
            }
            fixed[g] = Some(q);
            let trial = solve(c, n, m, &fixed);
            let ok = trial.iter().zip(&fixed).all(|(a, f)| f.map_or(true, |f| f == *a));
            if ok && total(c, m, &trial) <= best + tol {
                taken[q] = true;
                break;
            }
        }
    }
    let assignment: Vec<usize> = fixed.into_iter().map(|f| f.expect("every row is pinned")).collect();
    Ok(MatchResult {
        total_cost: total(c, m, &assignment),
        assignment,
    })
}
