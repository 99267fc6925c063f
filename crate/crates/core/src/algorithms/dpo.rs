use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::offline::bonus_table;
use super::GshfConfig;
use crate::env::{log_sigmoid, sigmoid, BanditInstance, PreferenceTuple, RewardTable, Vector};
use crate::error::{Error, Result};
use crate::policy::{gibbs_oracle, TabularPolicy};
use crate::reward::covariance;
use crate::solver::{minimize_on_ball, PgOptions};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpoReport {
    pub theta: Vec<f64>,
    pub beta: f64,
    /// Summed loss at the returned policy.
    pub loss: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn log_ratio(pi: &TabularPolicy, pi0: &TabularPolicy, x: usize, a: usize) -> Result<f64> {
    let (p, q) = (pi.prob(x, a), pi0.prob(x, a));
    if q == 0.0 && p > 0.0 {
        return Err(Error::Value(format!("π_θ puts mass on action {a} at context {x} outside the support of π0")));
    }
    Ok(p.ln() - q.ln())
}

/// `Σ −log σ(η·log(π_θ(aʷ)/π0(aʷ)) − η·log(π_θ(aˡ)/π0(aˡ)) + Γ(x,aʷ) − Γ(x,aˡ))`.
///
/// `bonus` is the per-pair margin table, already scaled by β.
pub fn pessimistic_dpo_loss(
    pi_theta: &TabularPolicy,
    data: &[PreferenceTuple],
    pi0: &TabularPolicy,
    eta: f64,
    bonus: &RewardTable,
) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::Parameter(format!("eta must be positive, got {eta}")));
    }
    let mut total = 0.0;
    for t in data {
        let (w, l) = t.winner_loser();
        let x = t.context;
        if x >= pi0.num_contexts() || w.max(l) >= pi0.row(x).len() {
            return Err(Error::Lookup(format!("tuple ({x}, {w}, {l}) is outside the policy table")));
        }
        let margin = eta * (log_ratio(pi_theta, pi0, x, w)? - log_ratio(pi_theta, pi0, x, l)?)
            + (bonus.get(x, w) - bonus.get(x, l));
        total -= log_sigmoid(margin);
    }
    Ok(total)
}

/// Minimizes [`pessimistic_dpo_loss`] over `π_θ = Gibbs(⟨θ,φ⟩ − β·Γ)`, `‖θ‖ ≤ B`.
///
/// The margin is read off the policy's log-ratios, whose θ-gradient for a pair
/// at the same context is `φ(x,aʷ) − φ(x,aˡ)`.
pub fn fit_pessimistic_dpo(
    data: &[PreferenceTuple],
    instance: &BanditInstance,
    config: &GshfConfig,
) -> Result<(TabularPolicy, DpoReport)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Input("DPO needs at least one preference tuple".into()));
    }
    let cov = covariance(data, instance, config.lambda, None)?;
    let beta = config.offline_beta(instance)?;
    let nu = config.resolve_nu(instance)?;
    let bonus = bonus_table(instance, &nu, &cov)?.scaled(beta);
    let eta = config.eta;

    let mut pairs: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    for t in data {
        let (w, l) = t.winner_loser();
        *pairs.entry((t.context, w, l)).or_default() += 1.0;
    }
    let pairs: Vec<_> = pairs
        .into_iter()
        .map(|((x, w, l), n)| {
            let z = &instance.features()[x][w] - &instance.features()[x][l];
            (x, w, l, n, z)
        })
        .collect();
    let policy = |theta: &Vector| {
        let r = RewardTable::linear(instance, theta).sub(&bonus);
        gibbs_oracle(&r, instance.pi0(), eta)
    };
    let pi0 = instance.pi0();
    let scale = 1.0 / data.len() as f64;
    let ridge = config.mle.ridge;
    let objective = |theta: &Vector| -> (f64, Vector) {
        let pi = policy(theta).expect("validated reward table");
        let mut value = 0.0;
        let mut grad = Vector::zeros(theta.len());
        for (x, w, l, n, z) in &pairs {
            let margin = eta * ((pi.prob(*x, *w).ln() - pi0.prob(*x, *w).ln()) - (pi.prob(*x, *l).ln() - pi0.prob(*x, *l).ln()))
                + (bonus.get(*x, *w) - bonus.get(*x, *l));
            value -= n * log_sigmoid(margin);
            grad.axpy(-n * sigmoid(-margin), z, 1.0);
        }
        (value * scale + ridge * theta.norm_squared(), grad * scale + theta * (2.0 * ridge))
    };
    let out = minimize_on_ball(
        objective,
        &Vector::zeros(instance.dim()),
        instance.bound(),
        PgOptions { tolerance: config.mle.tolerance, max_iterations: config.mle.max_iterations },
    );
    let pi = policy(&out.x)?;
    let loss = pessimistic_dpo_loss(&pi, data, pi0, eta, &bonus)?;
    Ok((
        pi,
        DpoReport {
            theta: out.x.as_slice().to_vec(),
            beta,
            loss,
            gradient_norm: out.projected_gradient_norm,
            iterations: out.iterations,
            converged: out.converged,
        },
    ))
}
