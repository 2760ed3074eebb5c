//! Regret-minimization laboratory for average-reward tabular MDPs.
//!
//! The crate is `no_std` with `alloc`: everything here is pure computation on
//! in-memory models. File formats, sweeps and the command-line tool live in the
//! `regretlab` companion crate.
//!
//! Module map:
//!
//! * [`mdp`]: exact planning on known models (policy evaluation, optimal gain
//!   and bias, Bellman gaps, diameter, non-degeneracy).
//! * [`confidence`]: visit statistics and confidence regions (KL, L1,
//!   Bernstein) intersected with an ambient set.
//! * [`evi`]: extended value iteration over a confidence region.
//! * [`learner`]: the episodic optimistic loop with doubling-trick or
//!   vanishing-multiplicative episode rules, and UCYCLE.
//! * [`envs`]: small hand-built instances, RiverSwim, random ergodic models.
//! * [`metrics`]: pseudo-regret, exploration episodes, regret-of-exploration
//!   proxy, visit-rate regimes.
//! * [`analysis`]: interior check, confusing-set emptiness, gain deviation bound.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analysis;
pub mod chain;
pub mod confidence;
pub mod envs;
pub mod evi;
pub mod learner;
mod linalg;
pub mod mdp;
pub mod metrics;
pub mod rng;

pub use analysis::{ClassificationReport, ConfusingSetVerdict};
pub use confidence::{AmbientSet, Family, KernelConstraint, RegionSpec, VisitStats};
pub use envs::EnvSpec;
pub use evi::EviResult;
pub use learner::{EpisodeRule, RunConfig, RunTrace, Schedule};
pub use mdp::{Layout, Mdp, MdpError, Policy, SolveResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
