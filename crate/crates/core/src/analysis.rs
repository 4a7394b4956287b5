//! Instance constants, arm gaps, regret bounds, and single-run regret traces.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::markov::{
    eigenvalue_gap, stationary_distribution, step_chain, ChainState, ProblemInstance,
};
use crate::matching::{enumerate_matchings, max_weight_matching, Matching, WeightMatrix};
use crate::policies::{ExplorationSchedule, Policy};
use crate::rng::RandomStream;

/// Upper limit on the forward scan for the first slot where `L(t)` clears
/// the sequence threshold.
pub const DIVERGENCE_SCAN_CAP: u64 = 1_000_000_000;

/// Everything a bound needs to know about an instance.
#[derive(Clone, Debug, Serialize)]
pub struct InstanceAnalysis {
    pub users: usize,
    pub resources: usize,
    pub mu: Vec<Vec<f64>>,
    pub mu_star: f64,
    #[serde(serialize_with = "ser_matching")]
    pub optimal_matching: Matching,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Smallest gap among suboptimal arms through each pair; `None` when the
    /// pair only appears in optimal arms.
    pub pair_delta_min: Vec<Vec<Option<f64>>>,
    pub pi_min: f64,
    pub s_max: usize,
    pub s_min: usize,
    pub theta_max: f64,
    pub theta_min: f64,
    pub eps_max: f64,
    pub eps_min: f64,
    /// Σ θ over every pair and state, divided by `pi_min`: a computable upper
    /// bound on the Markov correction constant of the regret decomposition.
    pub a_bound: f64,
}

fn ser_matching<S: serde::Serializer>(m: &Matching, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(m)
}

/// Per-pair stationary means `μ_ij = Σ_z θ_z π_z`.
pub fn mean_rewards(instance: &ProblemInstance) -> Result<Vec<Vec<f64>>> {
    (0..instance.users())
        .map(|i| {
            (0..instance.resources())
                .map(|j| {
                    let chain = instance.chain(i, j);
                    let pi = stationary_distribution(chain)?;
                    Ok(pi.iter().zip(chain.rewards()).map(|(p, r)| p * r).sum())
                })
                .collect()
        })
        .collect()
}

/// The best static matching on the true means and its value `μ*`.
pub fn optimal_matching(instance: &ProblemInstance) -> Result<(Matching, f64)> {
    let mu = mean_rewards(instance)?;
    Ok(max_weight_matching(&WeightMatrix::from_rows(&mu)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gaps {
    pub delta_min: f64,
    pub delta_max: f64,
    pub pair_delta_min: Vec<Vec<Option<f64>>>,
}

/// Arm gaps `Δ_k = μ* − μ_k` by enumerating every matching.
///
/// Arms within `1e-12` of `μ*` count as optimal.
pub fn gaps(mu: &[Vec<f64>], cap: u128) -> Result<Gaps> {
    let w = WeightMatrix::from_rows(mu)?;
    let (_, mu_star) = max_weight_matching(&w);
    let (m, n) = (w.rows(), w.cols());
    let mut delta_min = f64::INFINITY;
    let mut delta_max = 0.0f64;
    let mut pair: Vec<Vec<Option<f64>>> = vec![vec![None; n]; m];
    for arm in enumerate_matchings(m, n, cap)? {
        let delta = mu_star - w.total(&arm);
        delta_max = delta_max.max(delta);
        if delta > 1e-12 {
            delta_min = delta_min.min(delta);
            for (i, j) in arm.pairs() {
                let cell = &mut pair[i][j];
                *cell = Some(cell.map_or(delta, |d| d.min(delta)));
            }
        }
    }
    if !delta_min.is_finite() {
        return Err(Error::AllArmsOptimal);
    }
    Ok(Gaps {
        delta_min,
        delta_max,
        pair_delta_min: pair,
    })
}

/// Computes every constant the bounds use.
pub fn analyze(instance: &ProblemInstance, cap: u128) -> Result<InstanceAnalysis> {
    let mu = mean_rewards(instance)?;
    let (optimal, mu_star) = max_weight_matching(&WeightMatrix::from_rows(&mu)?);
    let g = gaps(&mu, cap)?;

    let mut pi_min = f64::INFINITY;
    let (mut s_max, mut s_min) = (0usize, usize::MAX);
    let (mut theta_max, mut theta_min) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut eps_max, mut eps_min) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut theta_sum = 0.0;
    for chain in instance.chains() {
        let pi = stationary_distribution(chain)?;
        pi_min = pi.iter().copied().fold(pi_min, f64::min);
        s_max = s_max.max(chain.num_states());
        s_min = s_min.min(chain.num_states());
        for &r in chain.rewards() {
            theta_max = theta_max.max(r);
            theta_min = theta_min.min(r);
            theta_sum += r;
        }
        let eps = eigenvalue_gap(chain)?;
        eps_max = eps_max.max(eps);
        eps_min = eps_min.min(eps);
    }

    Ok(InstanceAnalysis {
        users: instance.users(),
        resources: instance.resources(),
        mu,
        mu_star,
        optimal_matching: optimal,
        delta_min: g.delta_min,
        delta_max: g.delta_max,
        pair_delta_min: g.pair_delta_min,
        pi_min,
        s_max,
        s_min,
        theta_max,
        theta_min,
        eps_max,
        eps_min,
        a_bound: theta_sum / pi_min,
    })
}

/// Smallest constant exploration weight covered by the constant-`L` bound:
/// `(50 + 40M) θ_max² s_max² / ε_min`.
pub fn l_threshold(a: &InstanceAnalysis) -> f64 {
    threshold_with_base(a, 50.0)
}

/// Level a diverging `L(t)` must reach before the tail of the sequence bound
/// is summable: `(60 + 40M) θ_max² s_max² / ε_min`.
pub fn sequence_threshold(a: &InstanceAnalysis) -> f64 {
    threshold_with_base(a, 60.0)
}

fn threshold_with_base(a: &InstanceAnalysis, base: f64) -> f64 {
    let s = a.s_max as f64;
    (base + 40.0 * a.users as f64) * a.theta_max.powi(2) * s * s / a.eps_min
}

/// A regret bound split into the gap-weighted bracket and the additive
/// Markov correction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegretBound {
    /// `[...] · Δ_max`
    pub bracket: f64,
    pub a_bound: f64,
}

impl RegretBound {
    pub fn total(&self) -> f64 {
        self.bracket + self.a_bound
    }
}

fn require_positive_theta_min(a: &InstanceAnalysis) -> Result<()> {
    if a.theta_min > 0.0 {
        Ok(())
    } else {
        Err(Error::NotComputable(
            "bound divides by θ_min, which is zero".into(),
        ))
    }
}

/// Expected-regret bound for constant `l` at horizon `n`.
pub fn theorem1_bound(a: &InstanceAnalysis, l: f64, n: f64) -> Result<RegretBound> {
    let threshold = l_threshold(a);
    if !(l >= threshold) {
        return Err(Error::ThresholdViolated { l, threshold });
    }
    require_positive_theta_min(a)?;
    let (m, nn) = (a.users as f64, a.resources as f64);
    let log_term = 4.0 * m.powi(3) * nn * l * n.ln() / a.delta_min.powi(2);
    let tail = m * m * nn * (a.s_max as f64 / a.pi_min)
        * (1.0 + a.eps_max * l.sqrt() / (10.0 * a.s_min as f64 * a.theta_min))
        * (PI / 3.0);
    Ok(RegretBound {
        bracket: (log_term + m * nn + tail) * a.delta_max,
        a_bound: a.a_bound,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SequenceBound {
    pub bound: RegretBound,
    /// First slot with `L(t)` at or above [`sequence_threshold`].
    pub t1: u64,
    /// Constant collecting the non-summable head of the series, slots `1..t1`.
    pub b: f64,
}

/// First `t ≥ 1` with `L(t) ≥ target`. `L` is non-decreasing, so an
/// exponential probe followed by bisection finds the same slot as a linear scan.
pub fn first_slot_reaching(schedule: &ExplorationSchedule, target: f64, cap: u64) -> Result<u64> {
    let reaches = |t: u64| schedule.at(t as f64) >= target;
    if reaches(1) {
        return Ok(1);
    }
    let mut lo = 1u64;
    let mut hi = 2u64;
    while !reaches(hi) {
        if hi >= cap {
            return Err(Error::DivergenceCapExceeded { target, cap });
        }
        lo = hi;
        hi = (hi * 2).min(cap);
    }
    // Invariant: !reaches(lo) && reaches(hi).
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if reaches(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `B = 1 + M (s_max/π_min)(1 + ε_max/(10 s_min θ_min)) Σ_{t<t1} 2 t^{e(t)}`
/// with `e(t) = −(L(t) ε_min − (40M + 10) s_max² θ_max²)/(20 s_max² θ_max²) + 1/2`.
pub fn sequence_constant(a: &InstanceAnalysis, schedule: &ExplorationSchedule, t1: u64) -> f64 {
    let m = a.users as f64;
    let s2t2 = (a.s_max as f64).powi(2) * a.theta_max.powi(2);
    let head: f64 = (1..t1)
        .map(|t| {
            let tf = t as f64;
            let e = -(schedule.at(tf) * a.eps_min - (40.0 * m + 10.0) * s2t2) / (20.0 * s2t2) + 0.5;
            2.0 * tf.powf(e)
        })
        .sum();
    1.0 + m * (a.s_max as f64 / a.pi_min)
        * (1.0 + a.eps_max / (10.0 * a.s_min as f64 * a.theta_min))
        * head
}

/// Expected-regret bound for a non-decreasing schedule `L(n)` at horizon `n`.
pub fn theorem2_bound(
    a: &InstanceAnalysis,
    schedule: &ExplorationSchedule,
    n: f64,
) -> Result<SequenceBound> {
    theorem2_bound_capped(a, schedule, n, DIVERGENCE_SCAN_CAP)
}

pub fn theorem2_bound_capped(
    a: &InstanceAnalysis,
    schedule: &ExplorationSchedule,
    n: f64,
    cap: u64,
) -> Result<SequenceBound> {
    schedule.validate()?;
    require_positive_theta_min(a)?;
    let t1 = first_slot_reaching(schedule, sequence_threshold(a), cap)?;
    let b = sequence_constant(a, schedule, t1);
    let (m, nn) = (a.users as f64, a.resources as f64);
    let log_term = 4.0 * m.powi(3) * nn * schedule.at(n) * n.ln() / a.delta_min.powi(2);
    let tail = m * m * nn * (a.s_max as f64 / a.pi_min)
        * (1.0 + a.eps_max / (10.0 * a.s_min as f64 * a.theta_min))
        * (PI / 3.0);
    Ok(SequenceBound {
        bound: RegretBound {
            bracket: (log_term + m * nn * b + tail) * a.delta_max,
            a_bound: a.a_bound,
        },
        t1,
        b,
    })
}

/// The M×N grid of rested chains as seen by a policy: one state and one
/// random stream per pair, so a pair's reward sequence does not depend on
/// which other pairs were played in between.
#[derive(Debug, Clone)]
pub struct Environment<'a> {
    instance: &'a ProblemInstance,
    states: Vec<ChainState>,
    streams: Vec<RandomStream>,
}

impl<'a> Environment<'a> {
    /// Pair `(i, j)` draws from stream `1 + i·N + j` under `seed`; its initial
    /// state is drawn from its stationary distribution.
    pub fn new(instance: &'a ProblemInstance, seed: u64) -> Result<Self> {
        let mut states = Vec::with_capacity(instance.chains().len());
        let mut streams = Vec::with_capacity(instance.chains().len());
        for (k, chain) in instance.chains().iter().enumerate() {
            let mut rng = RandomStream::new(seed, 1 + k as u64);
            let pi = stationary_distribution(chain)?;
            states.push(ChainState::sample_from(&pi, &mut rng));
            streams.push(rng);
        }
        Ok(Self {
            instance,
            states,
            streams,
        })
    }

    /// Plays every pair of `m`, writing each user's reward into `rewards`.
    pub fn play(&mut self, m: &Matching, rewards: &mut Vec<f64>) {
        rewards.clear();
        let n = self.instance.resources();
        for (i, j) in m.pairs() {
            let k = i * n + j;
            let (next, y) = step_chain(self.states[k], self.instance.chain(i, j), &mut self.streams[k]);
            self.states[k] = next;
            rewards.push(y);
        }
    }
}

/// Neumaier summation. Long runs add millions of similar terms; without
/// compensation `t·μ*` and the running total drift apart by rounding alone.
#[derive(Clone, Copy, Debug, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// One run, sampled at checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub steps: Vec<u64>,
    pub cumulative_reward: Vec<f64>,
    /// `t·μ* − cumulative reward`
    pub regret: Vec<f64>,
    /// Row-major M×N play counts at each checkpoint.
    pub counts: Vec<Vec<u64>>,
}

/// Runs `policy` for `horizon` slots. `checkpoints` must be ascending and
/// within `1..=horizon`.
pub fn regret_trace(
    instance: &ProblemInstance,
    policy: &mut dyn Policy,
    mu_star: f64,
    horizon: u64,
    seed: u64,
    checkpoints: &[u64],
) -> Result<RunTrace> {
    let mut env = Environment::new(instance, seed)?;
    let n = instance.resources();
    let mut counts = vec![0u64; instance.users() * n];
    let mut rewards = Vec::with_capacity(instance.users());
    let mut cumulative = CompensatedSum::default();
    let mut trace = RunTrace {
        steps: Vec::with_capacity(checkpoints.len()),
        cumulative_reward: Vec::with_capacity(checkpoints.len()),
        regret: Vec::with_capacity(checkpoints.len()),
        counts: Vec::with_capacity(checkpoints.len()),
    };
    let mut next_cp = checkpoints.iter().copied().peekable();
    for t in 1..=horizon {
        let m = policy.choose()?;
        env.play(&m, &mut rewards);
        policy.update(&m, &rewards);
        for (i, j) in m.pairs() {
            counts[i * n + j] += 1;
        }
        cumulative.add(rewards.iter().sum::<f64>());
        while next_cp.peek() == Some(&t) {
            next_cp.next();
            let total = cumulative.value();
            trace.steps.push(t);
            trace.cumulative_reward.push(total);
            trace.regret.push(t as f64 * mu_star - total);
            trace.counts.push(counts.clone());
        }
    }
    Ok(trace)
}
