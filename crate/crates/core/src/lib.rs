//! Learning the best matching of users to resources when every
//! user/resource pair pays out according to its own rested Markov chain.
//!
//! - [`markov`]: chain specs, stationary quantities, simulation steps
//! - [`matching`]: exact max-weight bipartite matching and arm enumeration
//! - [`policies`]: the per-pair index policy and its baselines
//! - [`analysis`]: instance constants, regret bounds, single-run traces
//! - [`harness`]: config files, seeded replications, CSV output, CLI

pub mod analysis;
pub mod error;
pub mod harness;
pub mod markov;
pub mod matching;
pub mod policies;
pub mod rng;

pub use error::{Error, Result};
