//! Kuhn-Munkres (Hungarian) solver for rectangular assignment problems.

use alloc::vec;
use alloc::vec::Vec;

/// Dense row-major cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "cost matrix shape");
        CostMatrix { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        CostMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Total cost of a per-row assignment.
    pub fn cost_of(&self, assignment: &[Option<usize>]) -> f64 {
        assignment.iter().enumerate().filter_map(|(r, c)| c.map(|c| self.get(r, c))).sum()
    }
}

/// Minimum cost of a matching of size `min(rows, cols)` restricted to the
/// given rows and columns, with the row-to-column choice.
fn solve_subset(cost: &CostMatrix, rows: &[usize], cols: &[usize]) -> (f64, Vec<Option<usize>>) {
    let mut out = vec![None; rows.len()];
    if rows.is_empty() || cols.is_empty() {
        return (0.0, out);
    }
    if rows.len() <= cols.len() {
        let m = potentials(rows.len(), cols.len(), |i, j| cost.get(rows[i], cols[j]));
        let mut total = 0.0;
        for (i, j) in m.into_iter().enumerate() {
            total += cost.get(rows[i], cols[j]);
            out[i] = Some(cols[j]);
        }
        (total, out)
    } else {
        let m = potentials(cols.len(), rows.len(), |i, j| cost.get(rows[j], cols[i]));
        let mut total = 0.0;
        for (j, i) in m.into_iter().enumerate() {
            total += cost.get(rows[i], cols[j]);
            out[i] = Some(cols[j]);
        }
        (total, out)
    }
}

/// Shortest augmenting path with potentials; `n <= m`. Returns the column of
/// each row.
fn potentials(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    debug_assert!(n <= m);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // p[j]: 1-based row matched to column j (0 = free)
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
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
    let mut rows = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            rows[p[j] - 1] = j - 1;
        }
    }
    rows
}

/// Optimal assignment of size `min(rows, cols)`, as the column of each row.
///
/// Among assignments whose cost is optimal (up to a relative tolerance of
/// `1e-9`), the lexicographically smallest row-to-column sequence is
/// returned, with `Some(_)` ordered before `None`.
pub fn solve(cost: &CostMatrix) -> (f64, Vec<Option<usize>>) {
    let all_rows: Vec<usize> = (0..cost.rows).collect();
    let all_cols: Vec<usize> = (0..cost.cols).collect();
    let (optimum, _) = solve_subset(cost, &all_rows, &all_cols);
    let tol = 1e-9 * optimum.abs().max(1.0);
    let size = cost.rows.min(cost.cols);

    let mut assignment = vec![None; cost.rows];
    let mut free_cols = all_cols;
    let mut fixed = 0.0;
    let mut matched = 0;
    for r in 0..cost.rows {
        let rest: Vec<usize> = (r + 1..cost.rows).collect();
        let mut chosen = None;
        for (ci, &c) in free_cols.iter().enumerate() {
            let cols: Vec<usize> = free_cols.iter().copied().filter(|&x| x != c).collect();
            if matched + 1 + rest.len().min(cols.len()) != size {
                continue;
            }
            let (sub, _) = solve_subset(cost, &rest, &cols);
            if fixed + cost.get(r, c) + sub <= optimum + tol {
                chosen = Some(ci);
                break;
            }
        }
        if let Some(ci) = chosen {
            let c = free_cols.remove(ci);
            fixed += cost.get(r, c);
            matched += 1;
            assignment[r] = Some(c);
        }
    }
    (cost.cost_of(&assignment), assignment)
}
