//! Exact finite-instance laboratory for KL-regularized learning from
//! pairwise preferences: Bradley-Terry reward fitting, Gibbs policies,
//! pessimistic and exploratory learners, and exact diagnostics for all of them.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod analysis;
pub mod env;
pub mod error;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod solver;

pub use env::{
    generate_instance, BanditInstance, InstanceSpec, Origin, PreferenceTuple, RewardTable, Vector,
};
pub use error::{Error, Result};
pub use policy::{gibbs_oracle, kl_divergence, TabularPolicy};
pub use reward::{fit_mle, CovMatrix, MleOptions, MleReport, RewardParams};
pub use algorithms::{
    fit_pessimistic_dpo, offline_gshf, online_gshf, sequential_online, GshfConfig, GshfOption, NuChoice,
    OnlineTrajectory,
};
pub use analysis::BoundReport;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
