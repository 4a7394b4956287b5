//! Rested Markov reward chains: one per user/resource pair.
//!
//! A chain only moves when its pair is played. Playing a pair reads the
//! reward attached to the current state and then samples the next state.

use nalgebra::{DMatrix, Schur};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

const ROW_SUM_TOL: f64 = 1e-12;
const PIVOT_TOL: f64 = 1e-14;
const IMAG_TOL: f64 = 1e-9;
const SCHUR_EPS: f64 = 1e-14;
const SCHUR_MAX_ITER: usize = 10_000;

/// How much structure to verify when building a [`ChainSpec`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMode {
    /// Row-stochastic, finite non-negative rewards, irreducible and aperiodic.
    #[default]
    Strict,
    /// Only row-stochasticity and rewards are checked; the caller vouches
    /// for irreducibility and aperiodicity.
    AssumeValid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainSpec {
    transition: Vec<Vec<f64>>,
    rewards: Vec<f64>,
    cumulative: Vec<Vec<f64>>,
}

impl ChainSpec {
    pub fn new(transition: Vec<Vec<f64>>, rewards: Vec<f64>) -> Result<Self> {
        Self::with_mode(transition, rewards, ValidationMode::Strict)
    }

    pub fn with_mode(
        transition: Vec<Vec<f64>>,
        rewards: Vec<f64>,
        mode: ValidationMode,
    ) -> Result<Self> {
        let n = transition.len();
        if n == 0 {
            return Err(Error::validation("chain must have at least one state"));
        }
        if rewards.len() != n {
            return Err(Error::validation(format!(
                "rewards length {} does not match {} states",
                rewards.len(),
                n
            )));
        }
        for (z, row) in transition.iter().enumerate() {
            if row.len() != n {
                return Err(Error::validation(format!(
                    "transition row {z} has length {}, expected {n}",
                    row.len()
                )));
            }
            if row.iter().any(|&p| !p.is_finite() || !(0.0..=1.0).contains(&p)) {
                return Err(Error::validation(format!(
                    "transition row {z} has an entry outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::validation(format!(
                    "transition row {z} is not row-stochastic (sums to {sum})"
                )));
            }
        }
        if rewards.iter().any(|&r| !r.is_finite() || r < 0.0) {
            return Err(Error::validation("rewards must be finite and non-negative"));
        }
        if mode == ValidationMode::Strict {
            if !is_irreducible(&transition) {
                return Err(Error::validation("chain is not irreducible"));
            }
            if !is_aperiodic(&transition) {
                return Err(Error::validation("chain is not aperiodic"));
            }
        }
        let cumulative = transition
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                row.iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            transition,
            rewards,
            cumulative,
        })
    }

    /// Two-state chain on states {0, 1} with flip probabilities `p01` (0 to 1)
    /// and `p10` (1 to 0).
    pub fn two_state(p01: f64, p10: f64, theta0: f64, theta1: f64) -> Result<Self> {
        Self::two_state_with_mode(p01, p10, theta0, theta1, ValidationMode::Strict)
    }

    pub fn two_state_with_mode(
        p01: f64,
        p10: f64,
        theta0: f64,
        theta1: f64,
        mode: ValidationMode,
    ) -> Result<Self> {
        Self::with_mode(
            vec![vec![1.0 - p01, p01], vec![p10, 1.0 - p10]],
            vec![theta0, theta1],
            mode,
        )
    }

    /// A chain that never leaves its single state.
    pub fn constant(reward: f64) -> Result<Self> {
        Self::new(vec![vec![1.0]], vec![reward])
    }

    pub fn num_states(&self) -> usize {
        self.rewards.len()
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    fn sample_row(&self, from: usize, u: f64) -> usize {
        let row = &self.cumulative[from];
        // First index whose cumulative mass exceeds u; the last state absorbs rounding.
        row.iter()
            .position(|&c| u < c)
            .unwrap_or(self.num_states() - 1)
    }
}

/// Strong connectivity of the positive-entry graph: everything reachable from
/// state 0 along edges and along reversed edges.
fn is_irreducible(p: &[Vec<f64>]) -> bool {
    let n = p.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let w = if forward { p[u][v] } else { p[v][u] };
                if w > 0.0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Period of an irreducible chain is the gcd of `level(u) + 1 - level(v)` over
/// all positive edges, where `level` is BFS depth from any root.
fn is_aperiodic(p: &[Vec<f64>]) -> bool {
    let n = p.len();
    if (0..n).any(|z| p[z][z] > 0.0) {
        return true;
    }
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if p[u][v] > 0.0 && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut period = 0usize;
    for u in 0..n {
        for v in 0..n {
            if p[u][v] > 0.0 && level[u] != usize::MAX && level[v] != usize::MAX {
                let d = (level[u] + 1).abs_diff(level[v]);
                period = gcd(period, d);
            }
        }
    }
    period == 1
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Solves `πᵀP = πᵀ, Σπ = 1` directly: the last balance equation is replaced
/// by the normalization row and the system is eliminated with partial pivoting.
pub fn stationary_distribution(spec: &ChainSpec) -> Result<Vec<f64>> {
    let n = spec.num_states();
    // Augmented matrix [A | b] with A = Pᵀ - I.
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|r| {
            let mut row: Vec<f64> = (0..n)
                .map(|c| spec.transition[c][r] - if r == c { 1.0 } else { 0.0 })
                .collect();
            row.push(0.0);
            row
        })
        .collect();
    a[n - 1] = vec![1.0; n + 1];

    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .expect("non-empty pivot range");
        if a[pivot][col].abs() < PIVOT_TOL {
            return Err(Error::SingularSystem);
        }
        a.swap(col, pivot);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..=n {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let mut pi = vec![0.0; n];
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|c| a[r][c] * pi[c]).sum();
        pi[r] = (a[r][n] - tail) / a[r][r];
    }
    if pi.iter().any(|&x| !x.is_finite() || x <= 0.0) {
        return Err(Error::SingularSystem);
    }
    Ok(pi)
}

/// Mean reward under the stationary distribution.
pub fn stationary_mean(spec: &ChainSpec) -> Result<f64> {
    let pi = stationary_distribution(spec)?;
    Ok(pi.iter().zip(&spec.rewards).map(|(p, r)| p * r).sum())
}

/// `1 - λ₂` with λ₂ the second-largest eigenvalue of the transition matrix.
///
/// Two-state chains use the closed form `λ₂ = 1 - p01 - p10`, so the gap is
/// `p01 + p10` and may exceed 1. A single-state chain has no second eigenvalue
/// and reports a gap of 1. Larger chains must have a real spectrum; complex
/// eigenvalues yield [`Error::NotComputable`]
/// (see [`eigenvalue_gap_by_real_part`] for a relaxed ordering).
pub fn eigenvalue_gap(spec: &ChainSpec) -> Result<f64> {
    match spec.num_states() {
        1 => Ok(1.0),
        2 => Ok(spec.transition[0][1] + spec.transition[1][0]),
        _ => {
            let eig = spectrum(spec)?;
            if eig.iter().any(|&(_, im)| im.abs() > IMAG_TOL) {
                return Err(Error::NotComputable(
                    "transition matrix has complex eigenvalues; λ₂ ordering is undefined".into(),
                ));
            }
            second_by_real_part(eig)
        }
    }
}

/// Like [`eigenvalue_gap`] but orders every non-Perron eigenvalue by its real
/// part, so chains with complex spectra still get a gap `1 - max Re λ`.
pub fn eigenvalue_gap_by_real_part(spec: &ChainSpec) -> Result<f64> {
    match spec.num_states() {
        1 | 2 => eigenvalue_gap(spec),
        _ => second_by_real_part(spectrum(spec)?),
    }
}

fn spectrum(spec: &ChainSpec) -> Result<Vec<(f64, f64)>> {
    let n = spec.num_states();
    let m = DMatrix::from_fn(n, n, |r, c| spec.transition[r][c]);
    let schur = Schur::try_new(m, SCHUR_EPS, SCHUR_MAX_ITER).ok_or_else(|| {
        Error::NotComputable("eigenvalue iteration did not converge".into())
    })?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|c| (c.re, c.im))
        .collect())
}

fn second_by_real_part(mut eig: Vec<(f64, f64)>) -> Result<f64> {
    // Drop the Perron root: the eigenvalue closest to 1.
    let perron = eig
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let da = (a.1 .0 - 1.0).hypot(a.1 .1);
            let db = (b.1 .0 - 1.0).hypot(b.1 .1);
            da.total_cmp(&db)
        })
        .map(|(i, _)| i)
        .ok_or_else(|| Error::NotComputable("empty spectrum".into()))?;
    eig.swap_remove(perron);
    let lambda2 = eig
        .iter()
        .map(|&(re, _)| re)
        .max_by(f64::total_cmp)
        .ok_or_else(|| Error::NotComputable("no second eigenvalue".into()))?;
    Ok(1.0 - lambda2)
}

/// Current state of one rested chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainState {
    pub current: usize,
}

impl ChainState {
    pub fn new(current: usize) -> Self {
        Self { current }
    }

    /// Draws a starting state from `pi`.
    pub fn sample_from(pi: &[f64], rng: &mut RandomStream) -> Self {
        let u = rng.next_f64();
        let mut acc = 0.0;
        for (z, p) in pi.iter().enumerate() {
            acc += p;
            if u < acc {
                return Self::new(z);
            }
        }
        Self::new(pi.len() - 1)
    }
}

/// Plays the pair once: returns the reward of the current state and the
/// state the chain moves to.
pub fn step_chain(state: ChainState, spec: &ChainSpec, rng: &mut RandomStream) -> (ChainState, f64) {
    let reward = spec.rewards[state.current];
    let next = spec.sample_row(state.current, rng.next_f64());
    (ChainState::new(next), reward)
}

/// The M×N grid of mutually independent chains that defines a problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    users: usize,
    resources: usize,
    chains: Vec<ChainSpec>,
}

impl ProblemInstance {
    /// `chains` is row-major: `chains[i * resources + j]` is pair `(i, j)`.
    pub fn new(users: usize, resources: usize, chains: Vec<ChainSpec>) -> Result<Self> {
        if users == 0 || resources == 0 {
            return Err(Error::validation("M and N must be positive"));
        }
        if users > resources {
            return Err(Error::validation(format!(
                "M ≤ N violated: {users} users, {resources} resources"
            )));
        }
        if chains.len() != users * resources {
            return Err(Error::validation(format!(
                "expected {} chains, got {}",
                users * resources,
                chains.len()
            )));
        }
        Ok(Self {
            users,
            resources,
            chains,
        })
    }

    /// Builds an instance of two-state chains from four M×N tables.
    pub fn two_state(
        p01: &[Vec<f64>],
        p10: &[Vec<f64>],
        theta0: &[Vec<f64>],
        theta1: &[Vec<f64>],
        mode: ValidationMode,
    ) -> Result<Self> {
        let users = p01.len();
        let resources = p01.first().map_or(0, Vec::len);
        for (name, t) in [("p01", p01), ("p10", p10), ("theta0", theta0), ("theta1", theta1)] {
            if t.len() != users || t.iter().any(|r| r.len() != resources) {
                return Err(Error::validation(format!(
                    "table {name} is not {users}x{resources}"
                )));
            }
        }
        let mut chains = Vec::with_capacity(users * resources);
        for i in 0..users {
            for j in 0..resources {
                let chain = ChainSpec::two_state_with_mode(
                    p01[i][j],
                    p10[i][j],
                    theta0[i][j],
                    theta1[i][j],
                    mode,
                )
                .map_err(|e| Error::validation(format!("pair ({i},{j}): {e}")))?;
                chains.push(chain);
            }
        }
        Self::new(users, resources, chains)
    }

    /// Instance of single-state chains with the given deterministic rewards.
    pub fn deterministic(rewards: &[Vec<f64>]) -> Result<Self> {
        let users = rewards.len();
        let resources = rewards.first().map_or(0, Vec::len);
        let chains = rewards
            .iter()
            .flat_map(|row| row.iter().map(|&r| ChainSpec::constant(r)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(users, resources, chains)
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn resources(&self) -> usize {
        self.resources
    }

    pub fn chain(&self, user: usize, resource: usize) -> &ChainSpec {
        &self.chains[user * self.resources + resource]
    }

    pub fn chains(&self) -> &[ChainSpec] {
        &self.chains
    }
}
