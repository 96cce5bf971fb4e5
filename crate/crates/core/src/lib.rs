//! Probabilistic safety certificates for candidate safe sets derived from
//! learned reachability value functions.
//!
//! A candidate safe set is a level set of a value function `Ṽ(x, 0)`. States
//! are drawn from it by rejection sampling ([`sampler`]), rolled out under the
//! bang-bang policy induced by the value gradient ([`rollout`]), and the
//! number of empirically unsafe outcomes `k` out of `N` is turned into an
//! `(ε, β)` certificate ([`bounds`]). The same counts also give the exact
//! Beta distribution of the safe fraction, and the two views agree
//! numerically ([`bounds::check_equivalence`]).
//!
//! [`verifier`] orchestrates single-set certification, level sweeps and the
//! outlier-free iterative baseline; [`retrain`] refits a sinusoidal network
//! to rollout costs with conservative errors down-weighted.
//!
//! The crate is `no_std` + `alloc`. Enable `std` for `std::error::Error`
//! integration and `parallel` for rayon-backed batch rollouts; results are
//! identical with and without `parallel`.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod bounds;
pub mod dynamics;
mod error;
mod math;
pub mod retrain;
pub mod rollout;
pub mod sampler;
pub mod seed;
pub mod value_fn;
pub mod verifier;

pub use bounds::{BetaPosterior, BoundsError, Tolerances};
pub use dynamics::{Dynamics, ProblemMode, System, SystemSpec, TargetSpec};
pub use error::{Error, Result};
pub use retrain::{CostDataset, PipelineConfig, RetrainConfig, RetrainOutcome};
pub use rollout::{ErrorPolicy, InducedPolicy, Policy, RolloutResult, Verdict};
pub use sampler::SamplePlan;
pub use value_fn::{LevelSetSpec, SineMlp, ValueFunction};
pub use verifier::{Candidate, VerificationReport, VerifyParams};
