//! Seeded Monte-Carlo replications and their aggregation.

use serde::Serialize;

use crate::analysis::{optimal_matching, regret_trace, RunTrace};
use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::rng::{replication_seed, RandomStream, POLICY_STREAM};

/// How replications are scheduled. Without the `parallel` feature both
/// variants run sequentially.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: u64,
    pub reward_mean: f64,
    pub reward_se: f64,
    pub regret_mean: f64,
    pub regret_se: f64,
    pub regret_per_ln_n: f64,
}

/// Replication-averaged trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegretTrace {
    pub users: usize,
    pub resources: usize,
    pub mu_star: f64,
    pub replications: usize,
    pub rows: Vec<TraceRow>,
    /// Mean row-major play counts, one matrix per checkpoint.
    pub counts: Vec<Vec<f64>>,
}

impl RegretTrace {
    pub fn row_at(&self, step: u64) -> Option<&TraceRow> {
        self.rows.iter().find(|r| r.step == step)
    }

    pub fn counts_at(&self, step: u64) -> Option<&[f64]> {
        self.rows
            .iter()
            .position(|r| r.step == step)
            .map(|k| self.counts[k].as_slice())
    }
}

/// One replication. Its seed is `replication_seed(config.seed, index)`.
pub fn run_replication(config: &ExperimentConfig, mu_star: f64, index: usize) -> Result<RunTrace> {
    let seed = replication_seed(config.seed, index as u64);
    let mut policy = config.policy.build(
        &config.instance,
        config.enumeration_cap,
        RandomStream::new(seed, POLICY_STREAM),
    )?;
    regret_trace(
        &config.instance,
        policy.as_mut(),
        mu_star,
        config.horizon,
        seed,
        &config.checkpoints,
    )
}

/// Runs every replication and returns the per-replication traces in index order.
pub fn run_replications(config: &ExperimentConfig, execution: Execution) -> Result<Vec<RunTrace>> {
    let (_, mu_star) = optimal_matching(&config.instance)?;
    let job = |k: usize| run_replication(config, mu_star, k);
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..config.replications).into_par_iter().map(job).collect()
        }
        _ => (0..config.replications).map(job).collect(),
    }
}

pub fn run(config: &ExperimentConfig) -> Result<RegretTrace> {
    run_with(config, Execution::default())
}

pub fn run_with(config: &ExperimentConfig, execution: Execution) -> Result<RegretTrace> {
    let traces = run_replications(config, execution)?;
    let (_, mu_star) = optimal_matching(&config.instance)?;
    Ok(aggregate(
        &traces,
        mu_star,
        config.instance.users(),
        config.instance.resources(),
    ))
}

/// Reduces replication traces in slice order; the result depends only on
/// the traces, never on how they were scheduled.
pub fn aggregate(traces: &[RunTrace], mu_star: f64, users: usize, resources: usize) -> RegretTrace {
    let r = traces.len();
    let steps = traces.first().map(|t| t.steps.clone()).unwrap_or_default();
    let mut rows = Vec::with_capacity(steps.len());
    let mut counts = Vec::with_capacity(steps.len());
    for (k, &step) in steps.iter().enumerate() {
        let (reward_mean, reward_se) = mean_se(traces.iter().map(|t| t.cumulative_reward[k]), r);
        let (regret_mean, regret_se) = mean_se(traces.iter().map(|t| t.regret[k]), r);
        rows.push(TraceRow {
            step,
            reward_mean,
            reward_se,
            regret_mean,
            regret_se,
            regret_per_ln_n: regret_mean / (step as f64).ln(),
        });
        let mut mean = vec![0.0; users * resources];
        for t in traces {
            for (m, &c) in mean.iter_mut().zip(&t.counts[k]) {
                *m += c as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= r as f64);
        counts.push(mean);
    }
    RegretTrace {
        users,
        resources,
        mu_star,
        replications: r,
        rows,
        counts,
    }
}

/// Sample mean and standard error of the mean; the error is 0 for a single sample.
fn mean_se(xs: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = xs.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::ProblemInstance;
    use crate::policies::{ExplorationSchedule, PolicySpec};

    fn small_config(policy: PolicySpec, replications: usize) -> ExperimentConfig {
        let inst = ProblemInstance::two_state(
            &[vec![0.5, 0.4, 0.7]],
            &[vec![0.6, 0.7, 0.8]],
            &[vec![0.6, 0.5, 0.2]],
            &[vec![0.8, 0.2, 0.7]],
            Default::default(),
        )
        .unwrap();
        ExperimentConfig::new(inst, policy, 500, replications, 9, None).unwrap()
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let cfg = small_config(
            PolicySpec::Mlmr {
                schedule: ExplorationSchedule::Constant(2.0),
            },
            6,
        );
        let a = run_with(&cfg, Execution::Sequential).unwrap();
        let b = run_with(&cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn execution_order_does_not_change_aggregate() {
        let cfg = small_config(PolicySpec::UniformRandom, 5);
        let (_, mu_star) = optimal_matching(&cfg.instance).unwrap();
        let forward: Vec<_> = (0..5).map(|k| run_replication(&cfg, mu_star, k).unwrap()).collect();
        let mut backward: Vec<_> = (0..5)
            .rev()
            .map(|k| (k, run_replication(&cfg, mu_star, k).unwrap()))
            .collect();
        backward.sort_by_key(|(k, _)| *k);
        let backward: Vec<_> = backward.into_iter().map(|(_, t)| t).collect();
        assert_eq!(
            aggregate(&forward, mu_star, 1, 3),
            aggregate(&backward, mu_star, 1, 3)
        );
    }

    #[test]
    fn single_replication_has_zero_se() {
        let cfg = small_config(PolicySpec::UniformRandom, 1);
        let tr = run(&cfg).unwrap();
        assert!(tr.rows.iter().all(|r| r.reward_se == 0.0 && r.regret_se == 0.0));
    }

    #[test]
    fn replications_differ() {
        let cfg = small_config(PolicySpec::UniformRandom, 2);
        let t = run_replications(&cfg, Execution::Sequential).unwrap();
        assert_ne!(t[0], t[1]);
    }

    #[test]
    fn mean_se_known_values() {
        let (m, se) = mean_se([1.0, 2.0, 3.0, 4.0].into_iter(), 4);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
