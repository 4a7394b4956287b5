//! Maximum-weight matching of M users to N ≥ M resources.
//!
//! The solver pads the weight matrix to N×N with constant dummy rows and runs
//! a minimizing Hungarian core on the negated weights. Among all optimal
//! assignments it returns the lexicographically smallest one: every optimal
//! assignment lives on the tight edges of the final dual solution, so a greedy
//! walk over those edges (with an augmenting-path feasibility check) picks the
//! smallest resource for each user in turn.

use std::fmt;

use crate::error::{Error, Result};

pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// Dense M×N matrix of finite edge weights, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || rows > cols {
            return Err(Error::validation(format!(
                "weight matrix must satisfy 0 < M ≤ N, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::validation("weight matrix data has the wrong length"));
        }
        if data.iter().any(|w| !w.is_finite()) {
            return Err(Error::validation("weight matrix entries must be finite"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::validation("ragged weight matrix"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Caller guarantees shape and finiteness; used on hot paths.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert!(rows <= cols && data.len() == rows * cols);
        debug_assert!(data.iter().all(|w| w.is_finite()));
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Sum of the weights picked by `m`.
    pub fn total(&self, m: &Matching) -> f64 {
        m.pairs().map(|(i, j)| self.get(i, j)).sum()
    }
}

/// Injective assignment: `assignment()[i]` is the resource of user `i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Matching(Vec<usize>);

impl Matching {
    pub fn new(assignment: Vec<usize>, resources: usize) -> Result<Self> {
        let mut seen = vec![false; resources];
        for &j in &assignment {
            if j >= resources {
                return Err(Error::validation(format!(
                    "resource {j} out of range 0..{resources}"
                )));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::validation(format!(
                    "resource {j} assigned twice; matchings must be collision-free"
                )));
            }
        }
        Ok(Self(assignment))
    }

    pub(crate) fn from_raw(assignment: Vec<usize>) -> Self {
        Self(assignment)
    }

    pub fn assignment(&self) -> &[usize] {
        &self.0
    }

    pub fn users(&self) -> usize {
        self.0.len()
    }

    pub fn resource_of(&self, user: usize) -> usize {
        self.0[user]
    }

    pub fn contains(&self, user: usize, resource: usize) -> bool {
        self.0.get(user) == Some(&resource)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.iter().copied().enumerate()
    }
}

impl fmt::Display for Matching {
    /// One-based `{(user,resource),...}`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (k, (i, j)) in self.pairs().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "({},{})", i + 1, j + 1)?;
        }
        f.write_str("}")
    }
}

/// Reusable Hungarian solver. Scratch buffers persist between calls so the
/// per-step solve in a simulation does not allocate once warmed up.
#[derive(Debug, Default, Clone)]
pub struct MatchingSolver {
    cost: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    col_owner: Vec<usize>,
    way: Vec<usize>,
    minv: Vec<f64>,
    used: Vec<bool>,
    tight: Vec<bool>,
    row_of: Vec<usize>,
    col_of: Vec<usize>,
    row_fixed: Vec<bool>,
    col_fixed: Vec<bool>,
    visited: Vec<bool>,
}

impl MatchingSolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn solve(&mut self, w: &WeightMatrix) -> (Matching, f64) {
        let (m, n) = (w.rows, w.cols);
        let min_w = w.data.iter().copied().fold(f64::INFINITY, f64::min);
        let dummy = -(min_w - 1.0);
        let scale = w.data.iter().fold(1.0f64, |a, x| a.max(x.abs()));

        self.cost.clear();
        self.cost.extend(w.data.iter().map(|x| -x));
        self.cost.resize(n * n, dummy);

        self.hungarian(n);

        // Tight-edge graph of the optimal dual, plus the primal edges themselves
        // so rounding can never disconnect the solution we already hold.
        let tol = 1e-10 * scale * n as f64;
        self.tight.clear();
        self.tight.resize(n * n, false);
        for i in 0..n {
            for j in 0..n {
                let reduced = self.cost[i * n + j] - self.u[i + 1] - self.v[j + 1];
                self.tight[i * n + j] = reduced.abs() <= tol;
            }
        }
        self.row_of.clear();
        self.row_of.resize(n, usize::MAX);
        self.col_of.clear();
        self.col_of.resize(n, usize::MAX);
        for j in 1..=n {
            let i = self.col_owner[j] - 1;
            self.row_of[j - 1] = i;
            self.col_of[i] = j - 1;
            self.tight[i * n + (j - 1)] = true;
        }

        self.lexicographic_pass(m, n);

        let assignment: Vec<usize> = self.col_of[..m].to_vec();
        let total = assignment
            .iter()
            .enumerate()
            .map(|(i, &j)| w.get(i, j))
            .sum();
        (Matching(assignment), total)
    }

    /// Classic O(n³) potentials formulation on the square cost matrix.
    fn hungarian(&mut self, n: usize) {
        let inf = f64::INFINITY;
        self.u.clear();
        self.u.resize(n + 1, 0.0);
        self.v.clear();
        self.v.resize(n + 1, 0.0);
        self.col_owner.clear();
        self.col_owner.resize(n + 1, 0);
        self.way.clear();
        self.way.resize(n + 1, 0);

        for i in 1..=n {
            self.col_owner[0] = i;
            let mut j0 = 0usize;
            self.minv.clear();
            self.minv.resize(n + 1, inf);
            self.used.clear();
            self.used.resize(n + 1, false);
            loop {
                self.used[j0] = true;
                let i0 = self.col_owner[j0];
                let mut delta = inf;
                let mut j1 = 0usize;
                for j in 1..=n {
                    if self.used[j] {
                        continue;
                    }
                    let cur = self.cost[(i0 - 1) * n + (j - 1)] - self.u[i0] - self.v[j];
                    if cur < self.minv[j] {
                        self.minv[j] = cur;
                        self.way[j] = j0;
                    }
                    if self.minv[j] < delta {
                        delta = self.minv[j];
                        j1 = j;
                    }
                }
                for j in 0..=n {
                    if self.used[j] {
                        self.u[self.col_owner[j]] += delta;
                        self.v[j] -= delta;
                    } else {
                        self.minv[j] -= delta;
                    }
                }
                j0 = j1;
                if self.col_owner[j0] == 0 {
                    break;
                }
            }
            loop {
                let j1 = self.way[j0];
                self.col_owner[j0] = self.col_owner[j1];
                j0 = j1;
                if j0 == 0 {
                    break;
                }
            }
        }
    }

    /// Walks users in order and moves each to the smallest tight resource that
    /// still admits a perfect matching of the remaining rows.
    fn lexicographic_pass(&mut self, m: usize, n: usize) {
        self.row_fixed.clear();
        self.row_fixed.resize(n, false);
        self.col_fixed.clear();
        self.col_fixed.resize(n, false);
        for i in 0..m {
            for j in 0..n {
                if self.col_fixed[j] || !self.tight[i * n + j] {
                    continue;
                }
                if j == self.col_of[i] || self.reassign(i, j, n) {
                    break;
                }
            }
            self.row_fixed[i] = true;
            self.col_fixed[self.col_of[i]] = true;
        }
    }

    /// Tries to give column `j` to row `i`. The row currently owning `j` must
    /// find an alternating path, over unfixed tight edges, to the column `i`
    /// frees up.
    fn reassign(&mut self, i: usize, j: usize, n: usize) -> bool {
        let displaced = self.row_of[j];
        let freed = self.col_of[i];
        // Tentatively detach i from its column and block both i and j.
        self.row_of[freed] = usize::MAX;
        self.row_fixed[i] = true;
        self.col_fixed[j] = true;
        self.visited.clear();
        self.visited.resize(n, false);
        let ok = self.augment(displaced, n);
        self.row_fixed[i] = false;
        self.col_fixed[j] = false;
        if ok {
            self.row_of[j] = i;
            self.col_of[i] = j;
        } else {
            self.row_of[freed] = i;
        }
        ok
    }

    fn augment(&mut self, row: usize, n: usize) -> bool {
        for c in 0..n {
            if self.col_fixed[c] || self.visited[c] || !self.tight[row * n + c] {
                continue;
            }
            self.visited[c] = true;
            let owner = self.row_of[c];
            if owner == usize::MAX || (!self.row_fixed[owner] && self.augment(owner, n)) {
                self.row_of[c] = row;
                self.col_of[row] = c;
                return true;
            }
        }
        false
    }
}

/// Optimal matching and its total weight; ties resolve to the
/// lexicographically smallest assignment vector.
pub fn max_weight_matching(w: &WeightMatrix) -> (Matching, f64) {
    MatchingSolver::new().solve(w)
}

/// Number of injective assignments of `users` into `resources`, i.e. P(N, M).
pub fn count_matchings(users: usize, resources: usize) -> u128 {
    if users > resources {
        return 0;
    }
    (0..users).fold(1u128, |acc, k| acc.saturating_mul((resources - k) as u128))
}

/// Every injective assignment in lexicographic order.
pub fn enumerate_matchings(users: usize, resources: usize, cap: u128) -> Result<Matchings> {
    let count = count_matchings(users, resources);
    if count > cap {
        return Err(Error::CapExceeded {
            users,
            resources,
            count,
            cap,
        });
    }
    Ok(Matchings {
        resources,
        current: (users <= resources).then(|| (0..users).collect()),
    })
}

#[derive(Debug, Clone)]
pub struct Matchings {
    resources: usize,
    current: Option<Vec<usize>>,
}

impl Iterator for Matchings {
    type Item = Matching;

    fn next(&mut self) -> Option<Matching> {
        let out = self.current.take()?;
        self.current = lex_successor(&out, self.resources);
        Some(Matching(out))
    }
}

fn lex_successor(a: &[usize], n: usize) -> Option<Vec<usize>> {
    let m = a.len();
    for k in (0..m).rev() {
        let mut used = vec![false; n];
        for &x in &a[..k] {
            used[x] = true;
        }
        if let Some(v) = (a[k] + 1..n).find(|&v| !used[v]) {
            let mut next = a[..k].to_vec();
            next.push(v);
            used[v] = true;
            next.extend((0..n).filter(|&x| !used[x]).take(m - k - 1));
            return Some(next);
        }
    }
    None
}
