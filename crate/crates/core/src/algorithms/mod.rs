//! Learners: offline GSHF (both options), pessimistic DPO, online and hybrid
//! iterative GSHF, the sequential variant, and regret accounting.

mod dpo;
mod offline;
mod online;

pub use dpo::{fit_pessimistic_dpo, pessimistic_dpo_loss, DpoReport};
pub use offline::{offline_gshf, option_one_objective, OfflineDiagnostics};
pub use online::{
    enhancer_candidates, enhancer_select, enhancer_select_from, online_gshf, regret_metrics, sequential_online,
    EnhancerDiagnostics, EnhancerKind, IterationRecord, OnlineTrajectory, RegretMetrics,
};

use serde::{Deserialize, Serialize};

use crate::env::{BanditInstance, RewardTable, Vector};
use crate::error::{Error, Result};
use crate::policy::{gibbs_oracle, TabularPolicy};
use crate::reward::{beta_schedule, online_lambda, BetaMode, MleOptions};

/// The reference vector `ν` subtracted inside the uncertainty bonuses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuChoice {
    Zero,
    /// `E_{x~d0} φ(x, π_ref)`.
    ReferenceMean,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GshfOption {
    /// Offline: expected-bonus objective over the Gibbs class. Online: `π² = π_ref`.
    I,
    /// Offline: pointwise pessimistic reward. Online: uncertainty-seeking enhancer.
    II,
}

/// How the Option II enhancer is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhancerMode {
    /// Constrained uncertainty maximization over perturbed Gibbs candidates.
    Explore,
    /// Best-of-n rejection on the main agent's reward estimate.
    BestOfN { n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePolicy {
    Pi0,
    Uniform,
    Explicit(TabularPolicy),
}

impl ReferencePolicy {
    pub fn resolve(&self, instance: &BanditInstance) -> Result<TabularPolicy> {
        let pi = match self {
            Self::Pi0 => instance.pi0().clone(),
            Self::Uniform => TabularPolicy::uniform_for(instance),
            Self::Explicit(p) => p.clone(),
        };
        instance.check_shape(&pi)?;
        Ok(pi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GshfConfig {
    pub eta: f64,
    pub lambda: f64,
    /// Multiplier `c` in front of the confidence radius.
    pub beta_constant: f64,
    pub delta: f64,
    pub nu: NuChoice,
    pub option: GshfOption,
    /// Batch size `m`.
    pub batch_size: usize,
    /// Iterations `T`.
    pub iterations: usize,
    pub enhancer: EnhancerMode,
    /// Random directions added to the signed coordinate directions.
    pub enhancer_candidates: usize,
    pub reference: ReferencePolicy,
    /// Target accuracy `ε`; reported, never used.
    pub target_accuracy: Option<f64>,
    pub validation_contexts: usize,
    pub mle: MleOptions,
    /// Seeds the Option I restarts.
    pub seed: u64,
}

impl GshfConfig {
    /// Defaults around `eta`: `λ = 1`, `c = 1`, `δ = 0.05`, `ν = 0`, Option II,
    /// `m = 64`, `T = 10`, exploring enhancer with 8 random directions.
    pub fn new(eta: f64) -> Self {
        Self {
            eta,
            lambda: 1.0,
            beta_constant: 1.0,
            delta: 0.05,
            nu: NuChoice::Zero,
            option: GshfOption::II,
            batch_size: 64,
            iterations: 10,
            enhancer: EnhancerMode::Explore,
            enhancer_candidates: 8,
            reference: ReferencePolicy::Pi0,
            target_accuracy: None,
            validation_contexts: 512,
            mle: MleOptions::default(),
            seed: 0,
        }
    }

    /// Sets `λ = d·log(T/δ)/(m·γ²·B²)`, the scale the online analysis uses.
    pub fn with_online_lambda(mut self, instance: &BanditInstance) -> Self {
        self.lambda = online_lambda(
            instance.dim(),
            self.iterations,
            self.delta,
            self.batch_size,
            instance.gamma(),
            instance.bound(),
        );
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("η must be positive, got {}", self.eta));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("λ must be positive, got {}", self.lambda));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("δ must lie in (0,1), got {}", self.delta));
        }
        if !(self.beta_constant >= 0.0) {
            return bad(format!("β constant must be non-negative, got {}", self.beta_constant));
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return bad("m and T must be at least 1".into());
        }
        if self.validation_contexts == 0 {
            return bad("validation set must be nonempty".into());
        }
        if let EnhancerMode::BestOfN { n } = self.enhancer {
            if n == 0 {
                return bad("best-of-n needs n ≥ 1".into());
            }
        }
        Ok(())
    }

    /// `c·√((d + log(1/δ))/γ² + λB²)`.
    pub fn offline_beta(&self, instance: &BanditInstance) -> Result<f64> {
        beta_schedule(
            instance.dim(),
            instance.gamma(),
            self.lambda,
            instance.bound(),
            self.delta,
            0,
            self.beta_constant,
            BetaMode::Offline,
        )
    }

    /// `c·√(d·log(T/δ)/(γ²m))`.
    pub fn online_beta(&self, instance: &BanditInstance) -> Result<f64> {
        beta_schedule(
            instance.dim(),
            instance.gamma(),
            self.lambda,
            instance.bound(),
            self.delta,
            self.batch_size,
            self.beta_constant,
            BetaMode::Online { horizon: self.iterations },
        )
    }

    pub fn resolve_nu(&self, instance: &BanditInstance) -> Result<Vector> {
        match &self.nu {
            NuChoice::Zero => Ok(Vector::zeros(instance.dim())),
            NuChoice::ReferenceMean => Ok(instance.expected_feature(&self.reference.resolve(instance)?)),
            NuChoice::Explicit(v) if v.len() == instance.dim() => Ok(Vector::from_column_slice(v)),
            NuChoice::Explicit(v) => Err(Error::Input(format!("ν has dimension {}, expected {}", v.len(), instance.dim()))),
        }
    }
}

/// Gibbs policy of the linear reward `⟨θ, φ⟩`.
pub fn gibbs_of_theta(instance: &BanditInstance, theta: &Vector, eta: f64) -> Result<TabularPolicy> {
    gibbs_oracle(&RewardTable::linear(instance, theta), instance.pi0(), eta)
}
