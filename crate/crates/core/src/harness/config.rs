//! Experiment configuration files.
//!
//! Configs are TOML. The instance is either inline under `[instance]` or
//! pulled from another file with `instance.file = "path"` (relative to the
//! config). Two-state instances are written as four M×N tables, one matrix
//! row per line; general chains use `[[instance.chain]]` entries with
//! one-based `user`/`resource` indices.
//!
//! ```toml
//! seed = 1
//! horizon = 100000
//! replications = 20
//!
//! [policy]
//! kind = "mlmr"
//! schedule = "constant(303)"
//!
//! [instance]
//! users = 2
//! resources = 4
//! p01 = [
//!   [0.5, 0.4, 0.7, 0.3],
//!   [0.2, 0.9, 0.9, 0.7],
//! ]
//! # p10, theta0, theta1 likewise
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::markov::{ChainSpec, ProblemInstance, ValidationMode};
use crate::matching::DEFAULT_ENUMERATION_CAP;
use crate::policies::PolicySpec;

pub const DEFAULT_REPLICATIONS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub instance: ProblemInstance,
    pub policy: PolicySpec,
    pub horizon: u64,
    pub replications: usize,
    pub seed: u64,
    pub checkpoints: Vec<u64>,
    pub enumeration_cap: u128,
}

impl ExperimentConfig {
    /// Validates the run parameters against the instance.
    pub fn new(
        instance: ProblemInstance,
        policy: PolicySpec,
        horizon: u64,
        replications: usize,
        seed: u64,
        checkpoints: Option<Vec<u64>>,
    ) -> Result<Self> {
        let min_horizon = (instance.users() * instance.resources()) as u64;
        if horizon < min_horizon {
            return Err(Error::validation(format!(
                "horizon {horizon} is shorter than the M·N = {min_horizon} initialization slots"
            )));
        }
        if replications == 0 {
            return Err(Error::validation("replications must be positive"));
        }
        let checkpoints = checkpoints.unwrap_or_else(|| default_checkpoints(horizon));
        if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation("checkpoints must be strictly ascending"));
        }
        if checkpoints.iter().any(|&c| c == 0 || c > horizon) {
            return Err(Error::validation(format!(
                "checkpoints must lie in 1..={horizon}"
            )));
        }
        if let PolicySpec::Mlmr { schedule } = &policy {
            schedule.validate()?;
        }
        Ok(Self {
            instance,
            policy,
            horizon,
            replications,
            seed,
            checkpoints,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        })
    }

    pub fn with_policy(&self, policy: PolicySpec) -> Self {
        Self {
            policy,
            ..self.clone()
        }
    }
}

/// Powers of two from 2 up to the horizon, plus the horizon itself.
pub fn default_checkpoints(horizon: u64) -> Vec<u64> {
    let mut v: Vec<u64> = std::iter::successors(Some(2u64), |&x| x.checked_mul(2))
        .take_while(|&x| x <= horizon)
        .collect();
    if v.last() != Some(&horizon) {
        v.push(horizon);
    }
    v
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: u64,
    horizon: u64,
    #[serde(default = "default_replications")]
    replications: usize,
    checkpoints: Option<Vec<u64>>,
    enumeration_cap: Option<u64>,
    policy: PolicySpec,
    instance: RawInstance,
}

fn default_replications() -> usize {
    DEFAULT_REPLICATIONS
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    file: Option<PathBuf>,
    users: Option<usize>,
    resources: Option<usize>,
    #[serde(default)]
    validation: ValidationMode,
    p01: Option<Vec<Vec<f64>>>,
    p10: Option<Vec<Vec<f64>>>,
    theta0: Option<Vec<Vec<f64>>>,
    theta1: Option<Vec<Vec<f64>>>,
    chain: Option<Vec<RawChain>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChain {
    user: usize,
    resource: usize,
    transition: Vec<Vec<f64>>,
    rewards: Vec<f64>,
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message: e.to_string().trim_end().to_string(),
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, path)
}

/// Parses config text; `origin` names the source in errors and anchors
/// relative instance paths.
pub fn parse_config(text: &str, origin: &Path) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| parse_err(origin, e))?;
    let instance = build_instance(raw.instance, origin)?;
    let mut cfg = ExperimentConfig::new(
        instance,
        raw.policy,
        raw.horizon,
        raw.replications,
        raw.seed,
        raw.checkpoints,
    )?;
    if let Some(cap) = raw.enumeration_cap {
        cfg.enumeration_cap = cap as u128;
    }
    Ok(cfg)
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<ProblemInstance> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let raw: RawInstance = toml::from_str(&text).map_err(|e| parse_err(path, e))?;
    build_instance(raw, path)
}

fn build_instance(raw: RawInstance, origin: &Path) -> Result<ProblemInstance> {
    if let Some(file) = raw.file {
        let base = origin.parent().unwrap_or(Path::new("."));
        return load_instance(base.join(file));
    }
    let tables = [raw.p01, raw.p10, raw.theta0, raw.theta1];
    let instance = match (tables, raw.chain) {
        ([Some(p01), Some(p10), Some(theta0), Some(theta1)], None) => {
            ProblemInstance::two_state(&p01, &p10, &theta0, &theta1, raw.validation)?
        }
        ([None, None, None, None], Some(chains)) => {
            let users = raw
                .users
                .ok_or_else(|| Error::validation("instance.users is required with [[instance.chain]]"))?;
            let resources = raw.resources.ok_or_else(|| {
                Error::validation("instance.resources is required with [[instance.chain]]")
            })?;
            general_instance(users, resources, chains, raw.validation)?
        }
        _ => {
            return Err(Error::validation(
                "instance needs either all of p01/p10/theta0/theta1 or [[instance.chain]] entries",
            ))
        }
    };
    for (name, declared, actual) in [
        ("users", raw.users, instance.users()),
        ("resources", raw.resources, instance.resources()),
    ] {
        if declared.is_some_and(|d| d != actual) {
            return Err(Error::validation(format!(
                "instance.{name} = {} but the tables have {actual}",
                declared.unwrap_or_default()
            )));
        }
    }
    Ok(instance)
}

fn general_instance(
    users: usize,
    resources: usize,
    chains: Vec<RawChain>,
    mode: ValidationMode,
) -> Result<ProblemInstance> {
    if users > resources {
        return Err(Error::validation(format!(
            "M ≤ N violated: {users} users, {resources} resources"
        )));
    }
    let mut grid: Vec<Option<ChainSpec>> = vec![None; users * resources];
    for c in chains {
        if c.user == 0 || c.user > users || c.resource == 0 || c.resource > resources {
            return Err(Error::validation(format!(
                "chain ({},{}) is outside the {users}x{resources} grid (indices are one-based)",
                c.user, c.resource
            )));
        }
        let slot = &mut grid[(c.user - 1) * resources + (c.resource - 1)];
        if slot.is_some() {
            return Err(Error::validation(format!(
                "chain ({},{}) is defined twice",
                c.user, c.resource
            )));
        }
        *slot = Some(
            ChainSpec::with_mode(c.transition, c.rewards, mode)
                .map_err(|e| Error::validation(format!("pair ({},{}): {e}", c.user, c.resource)))?,
        );
    }
    let chains = grid
        .into_iter()
        .enumerate()
        .map(|(k, c)| {
            c.ok_or_else(|| {
                Error::validation(format!(
                    "chain ({},{}) is missing",
                    k / resources + 1,
                    k % resources + 1
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ProblemInstance::new(users, resources, chains)
}
