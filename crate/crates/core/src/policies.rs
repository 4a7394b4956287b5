//! Matching policies behind one choose/update interface.
//!
//! [`Mlmr`] keeps two M×N matrices (sample means and play counts) and, after
//! an M·N-step initialization that touches every pair, plays the max-weight
//! matching of per-pair upper confidence indices. [`Ucb1Arms`] is the naive
//! baseline that treats each of the P(N, M) matchings as an independent arm.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::error::{Error, Result};
use crate::markov::ProblemInstance;
use crate::matching::{enumerate_matchings, Matching, MatchingSolver, WeightMatrix};
use crate::rng::RandomStream;

/// Exploration weight `L` in the index, either fixed or a non-decreasing
/// sequence `L(n)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExplorationSchedule {
    Constant(f64),
    /// `c · ln(ln(n + e))`
    LogLog { c: f64 },
    /// `c · n^a`, `a ∈ (0, 1]`
    Power { c: f64, a: f64 },
}

impl ExplorationSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Constant(l) => l.is_finite() && l > 0.0,
            Self::LogLog { c } => c.is_finite() && c > 0.0,
            Self::Power { c, a } => c.is_finite() && c > 0.0 && a > 0.0 && a <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("invalid exploration schedule {self}")))
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant(_))
    }

    /// `L` at slot `n`. Sequences are clamped so that `L(n) ≤ n`.
    pub fn at(&self, n: f64) -> f64 {
        match *self {
            Self::Constant(l) => l,
            Self::LogLog { c } => (c * (n + std::f64::consts::E).ln().ln()).min(n),
            Self::Power { c, a } => (c * n.powf(a)).min(n),
        }
    }
}

impl fmt::Display for ExplorationSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(l) => write!(f, "constant({l})"),
            Self::LogLog { c } => write!(f, "log_log({c})"),
            Self::Power { c, a } => write!(f, "power({c}, {a})"),
        }
    }
}

impl FromStr for ExplorationSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::validation(format!("cannot parse schedule '{s}'"));
        let s = s.trim();
        let open = s.find('(').ok_or_else(bad)?;
        let name = s[..open].trim();
        let args = s[open + 1..].strip_suffix(')').ok_or_else(bad)?;
        let args: Vec<f64> = args
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let schedule = match (name, args.as_slice()) {
            ("constant", &[l]) => Self::Constant(l),
            ("log_log", &[c]) => Self::LogLog { c },
            ("power", &[c, a]) => Self::Power { c, a },
            _ => return Err(bad()),
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

impl Serialize for ExplorationSchedule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ExplorationSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-pair sample means and play counts, plus the number of completed slots.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyState {
    users: usize,
    resources: usize,
    theta_hat: Vec<f64>,
    counts: Vec<u64>,
    t: u64,
}

impl PolicyState {
    pub fn new(users: usize, resources: usize) -> Self {
        Self {
            users,
            resources,
            theta_hat: vec![0.0; users * resources],
            counts: vec![0; users * resources],
            t: 0,
        }
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn resources(&self) -> usize {
        self.resources
    }

    pub fn theta_hat(&self, i: usize, j: usize) -> f64 {
        self.theta_hat[i * self.resources + j]
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.resources + j]
    }

    /// Row-major count matrix.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn theta_hats(&self) -> &[f64] {
        &self.theta_hat
    }

    /// Completed time slots.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Numbers held by the learner: two M×N matrices and the slot counter.
    pub fn storage_len(&self) -> usize {
        self.theta_hat.len() + self.counts.len() + 1
    }

    /// Overwrites one cell; meant for seeding states in tests and tools.
    pub fn set_cell(&mut self, i: usize, j: usize, theta_hat: f64, count: u64) {
        let k = i * self.resources + j;
        self.theta_hat[k] = theta_hat;
        self.counts[k] = count;
    }

    pub fn set_t(&mut self, t: u64) {
        self.t = t;
    }
}

/// One matching per pair `(p, q)` in row-major order. Slot `(p, q)` gives user
/// `p` resource `q` and every other user `i` resource `(q + i - p) mod N`.
pub fn mlmr_init_schedule(users: usize, resources: usize) -> Vec<Matching> {
    let n = resources as isize;
    (0..users)
        .flat_map(|p| {
            (0..resources).map(move |q| {
                Matching::from_raw(
                    (0..users)
                        .map(|i| (q as isize + i as isize - p as isize).rem_euclid(n) as usize)
                        .collect(),
                )
            })
        })
        .collect()
}

/// Index matrix `θ̂ + sqrt(L(slot) · ln(slot) / n)` evaluated at time `slot`.
pub fn mlmr_index(state: &PolicyState, schedule: &ExplorationSchedule, slot: f64) -> Result<WeightMatrix> {
    let mut data = Vec::with_capacity(state.counts.len());
    fill_index(state, schedule, slot, &mut data)?;
    Ok(WeightMatrix::from_raw(state.users, state.resources, data))
}

fn fill_index(
    state: &PolicyState,
    schedule: &ExplorationSchedule,
    slot: f64,
    out: &mut Vec<f64>,
) -> Result<()> {
    if let Some(k) = state.counts.iter().position(|&c| c == 0) {
        return Err(Error::NotInitialized {
            user: k / state.resources,
            resource: k % state.resources,
        });
    }
    let numerator = schedule.at(slot) * slot.ln();
    out.clear();
    out.extend(
        state
            .theta_hat
            .iter()
            .zip(&state.counts)
            .map(|(&m, &c)| m + (numerator / c as f64).sqrt()),
    );
    Ok(())
}

/// Max-weight matching of the index matrix at the next slot, `t + 1`.
pub fn mlmr_choose(state: &PolicyState, schedule: &ExplorationSchedule) -> Result<Matching> {
    let w = mlmr_index(state, schedule, (state.t + 1) as f64)?;
    Ok(MatchingSolver::new().solve(&w).0)
}

/// Folds one slot of observations into the running means.
pub fn mlmr_update(state: &mut PolicyState, played: &Matching, rewards: &[f64]) {
    debug_assert_eq!(played.users(), state.users);
    debug_assert_eq!(rewards.len(), state.users);
    for ((i, j), &y) in played.pairs().zip(rewards) {
        let k = i * state.resources + j;
        let n = state.counts[k] as f64;
        state.theta_hat[k] = (state.theta_hat[k] * n + y) / (n + 1.0);
        state.counts[k] += 1;
    }
    state.t += 1;
}

/// Optimal static matching on the true mean rewards.
pub fn oracle_choose(instance: &ProblemInstance) -> Result<Matching> {
    Ok(analysis::optimal_matching(instance)?.0)
}

pub trait Policy: Send {
    fn choose(&mut self) -> Result<Matching>;
    fn update(&mut self, played: &Matching, rewards: &[f64]);
}

#[derive(Debug, Clone)]
pub struct Mlmr {
    state: PolicyState,
    schedule: ExplorationSchedule,
    init: Vec<Matching>,
    solver: MatchingSolver,
    index: Vec<f64>,
}

impl Mlmr {
    pub fn new(users: usize, resources: usize, schedule: ExplorationSchedule) -> Result<Self> {
        schedule.validate()?;
        if users == 0 || users > resources {
            return Err(Error::validation("M ≤ N violated"));
        }
        Ok(Self {
            state: PolicyState::new(users, resources),
            schedule,
            init: mlmr_init_schedule(users, resources),
            solver: MatchingSolver::new(),
            index: Vec::new(),
        })
    }

    pub fn state(&self) -> &PolicyState {
        &self.state
    }
}

impl Policy for Mlmr {
    fn choose(&mut self) -> Result<Matching> {
        if let Some(m) = self.init.get(self.state.t as usize) {
            return Ok(m.clone());
        }
        let slot = (self.state.t + 1) as f64;
        let mut data = std::mem::take(&mut self.index);
        fill_index(&self.state, &self.schedule, slot, &mut data)?;
        let w = WeightMatrix::from_raw(self.state.users, self.state.resources, data);
        let (m, _) = self.solver.solve(&w);
        self.index = w.into_data();
        Ok(m)
    }

    fn update(&mut self, played: &Matching, rewards: &[f64]) {
        mlmr_update(&mut self.state, played, rewards);
    }
}

/// UCB1 over the enumerated matchings, with `sqrt(L ln n / T_k)` bonuses.
#[derive(Debug, Clone)]
pub struct Ucb1Arms {
    arms: Vec<Matching>,
    lookup: HashMap<Matching, usize>,
    means: Vec<f64>,
    plays: Vec<u64>,
    t: u64,
    l: f64,
}

impl Ucb1Arms {
    pub fn new(users: usize, resources: usize, l: f64, cap: u128) -> Result<Self> {
        ExplorationSchedule::Constant(l).validate()?;
        let arms: Vec<Matching> = enumerate_matchings(users, resources, cap)?.collect();
        let lookup = arms.iter().cloned().enumerate().map(|(k, m)| (m, k)).collect();
        Ok(Self {
            means: vec![0.0; arms.len()],
            plays: vec![0; arms.len()],
            arms,
            lookup,
            t: 0,
            l,
        })
    }

    pub fn arms(&self) -> &[Matching] {
        &self.arms
    }

    pub fn plays(&self) -> &[u64] {
        &self.plays
    }

    /// Index of every arm at slot `slot`; requires every arm played once.
    pub fn indices(&self, slot: f64) -> Vec<f64> {
        let numerator = self.l * slot.ln();
        self.means
            .iter()
            .zip(&self.plays)
            .map(|(&m, &p)| m + (numerator / p as f64).sqrt())
            .collect()
    }
}

impl Policy for Ucb1Arms {
    fn choose(&mut self) -> Result<Matching> {
        if let Some(k) = self.plays.iter().position(|&p| p == 0) {
            return Ok(self.arms[k].clone());
        }
        let idx = self.indices((self.t + 1) as f64);
        // First maximum wins, which is the lexicographically smallest arm.
        let best = idx
            .iter()
            .enumerate()
            .fold(0, |b, (k, &v)| if v > idx[b] { k } else { b });
        Ok(self.arms[best].clone())
    }

    fn update(&mut self, played: &Matching, rewards: &[f64]) {
        let k = self.lookup[played];
        let y: f64 = rewards.iter().sum();
        let n = self.plays[k] as f64;
        self.means[k] = (self.means[k] * n + y) / (n + 1.0);
        self.plays[k] += 1;
        self.t += 1;
    }
}

/// Always plays the optimal static matching.
#[derive(Debug, Clone)]
pub struct Oracle {
    matching: Matching,
}

impl Oracle {
    pub fn new(instance: &ProblemInstance) -> Result<Self> {
        Ok(Self {
            matching: oracle_choose(instance)?,
        })
    }
}

impl Policy for Oracle {
    fn choose(&mut self) -> Result<Matching> {
        Ok(self.matching.clone())
    }

    fn update(&mut self, _: &Matching, _: &[f64]) {}
}

/// Uniformly random matching each slot (partial Fisher-Yates).
#[derive(Debug, Clone)]
pub struct UniformRandom {
    users: usize,
    pool: Vec<usize>,
    rng: RandomStream,
}

impl UniformRandom {
    pub fn new(users: usize, resources: usize, rng: RandomStream) -> Self {
        Self {
            users,
            pool: (0..resources).collect(),
            rng,
        }
    }
}

impl Policy for UniformRandom {
    fn choose(&mut self) -> Result<Matching> {
        let n = self.pool.len();
        for i in 0..self.users {
            let k = i + self.rng.below(n - i);
            self.pool.swap(i, k);
        }
        Ok(Matching::from_raw(self.pool[..self.users].to_vec()))
    }

    fn update(&mut self, _: &Matching, _: &[f64]) {}
}

/// Serializable choice of policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Mlmr {
        schedule: ExplorationSchedule,
    },
    Ucb1Arms {
        #[serde(rename = "L", default = "default_ucb1_l")]
        l: f64,
    },
    Oracle,
    UniformRandom,
}

fn default_ucb1_l() -> f64 {
    2.0
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Mlmr { .. } => "mlmr",
            Self::Ucb1Arms { .. } => "ucb1_arms",
            Self::Oracle => "oracle",
            Self::UniformRandom => "uniform_random",
        }
    }

    /// `rng` is only consumed by randomized policies.
    pub fn build(
        &self,
        instance: &ProblemInstance,
        cap: u128,
        rng: RandomStream,
    ) -> Result<Box<dyn Policy>> {
        let (m, n) = (instance.users(), instance.resources());
        Ok(match self {
            Self::Mlmr { schedule } => Box::new(Mlmr::new(m, n, *schedule)?),
            Self::Ucb1Arms { l } => Box::new(Ucb1Arms::new(m, n, *l, cap)?),
            Self::Oracle => Box::new(Oracle::new(instance)?),
            Self::UniformRandom => Box::new(UniformRandom::new(m, n, rng)),
        })
    }
}
