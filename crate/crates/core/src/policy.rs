//! Tabular policies, the Gibbs policy-improvement oracle, best-of-n, and
//! single/multi-step rejection sampling toward Gibbs targets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{log_sum_exp, normalize, sample_categorical, BanditInstance, RewardTable};
use crate::error::{Error, Result};

const ROW_TOL: f64 = 1e-9;

/// Per-context probability vectors over that context's actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    rows: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (x, row) in rows.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::Input(format!("policy row {x} is empty")));
            }
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::Input(format!("policy row {x} has a negative or non-finite entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_TOL {
                return Err(Error::Input(format!("policy row {x} sums to {total}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn uniform(action_counts: &[usize]) -> Self {
        let rows = action_counts.iter().map(|&k| vec![1.0 / k as f64; k]).collect();
        Self { rows }
    }

    /// Uniform policy shaped like `instance`.
    pub fn uniform_for(instance: &BanditInstance) -> Self {
        let counts: Vec<usize> = (0..instance.num_contexts()).map(|x| instance.num_actions(x)).collect();
        Self::uniform(&counts)
    }

    pub fn num_contexts(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.rows[x]
    }

    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.rows[x][a]
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        sample_categorical(&self.rows[x], rng)
    }

    /// Total variation distance between the two rows at `x`.
    pub fn total_variation(&self, other: &TabularPolicy, x: usize) -> f64 {
        0.5 * self.rows[x].iter().zip(&other.rows[x]).map(|(p, q)| (p - q).abs()).sum::<f64>()
    }

    /// Largest per-context total variation distance.
    pub fn max_total_variation(&self, other: &TabularPolicy) -> f64 {
        (0..self.num_contexts()).map(|x| self.total_variation(other, x)).fold(0.0, f64::max)
    }
}

/// `π(a|x) ∝ π0(a|x)·exp(r(x,a)/η)`, computed in log space with per-context
/// max subtraction. Zero-probability actions of `π0` stay at zero.
pub fn gibbs_oracle(rewards: &RewardTable, pi0: &TabularPolicy, eta: f64) -> Result<TabularPolicy> {
    if !(eta > 0.0) {
        return Err(Error::Parameter(format!("eta must be positive, got {eta}")));
    }
    if rewards.num_contexts() != pi0.num_contexts() {
        return Err(Error::Input("reward table and π0 disagree on context count".into()));
    }
    let rows = (0..pi0.num_contexts())
        .map(|x| gibbs_row(rewards.row(x), pi0.row(x), eta))
        .collect::<Result<Vec<_>>>()?;
    Ok(TabularPolicy { rows })
}

pub(crate) fn gibbs_row(rewards: &[f64], base: &[f64], eta: f64) -> Result<Vec<f64>> {
    if rewards.len() != base.len() {
        return Err(Error::Input("reward row and π0 row lengths differ".into()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::Domain("non-finite reward".into()));
    }
    let logits: Vec<f64> = rewards
        .iter()
        .zip(base)
        .map(|(r, p)| if *p > 0.0 { p.ln() + r / eta } else { f64::NEG_INFINITY })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    Ok(normalize(weights))
}

/// `KL(p(·|x) ‖ q(·|x))` with `0·log 0 = 0`.
pub fn kl_divergence(p: &TabularPolicy, q: &TabularPolicy, x: usize) -> Result<f64> {
    let (pr, qr) = (p.row(x), q.row(x));
    if pr.len() != qr.len() {
        return Err(Error::Input(format!("rows at context {x} have different lengths")));
    }
    let mut kl = 0.0;
    for (a, (&pa, &qa)) in pr.iter().zip(qr).enumerate() {
        if pa > 0.0 {
            if qa <= 0.0 {
                return Err(Error::Value(format!("support violation at ({x},{a}): KL is infinite")));
            }
            kl += pa * (pa / qa).ln();
        }
    }
    // rounding can leave tiny negative values for p ≈ q
    Ok(kl.max(0.0))
}

/// `E_{x~d0} KL(p(·|x) ‖ q(·|x))`.
pub fn expected_kl(p: &TabularPolicy, q: &TabularPolicy, d0: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (x, &w) in d0.iter().enumerate() {
        if w > 0.0 {
            total += w * kl_divergence(p, q, x)?;
        }
    }
    Ok(total)
}

/// `true` when `a` beats `b` under the best-of-n ordering: higher reward,
/// ties broken toward the lower index.
fn beats(rewards: &[f64], a: usize, b: usize) -> bool {
    rewards[a] > rewards[b] || (rewards[a] == rewards[b] && a < b)
}

/// Draws `n` actions from `π(·|x)` and keeps the highest-reward one.
pub fn best_of_n<R: Rng + ?Sized>(pi: &TabularPolicy, rewards: &RewardTable, n: usize, x: usize, rng: &mut R) -> Result<usize> {
    if n == 0 {
        return Err(Error::Parameter("best-of-n needs n ≥ 1".into()));
    }
    let row = rewards.row(x);
    let mut best = pi.sample(x, rng);
    for _ in 1..n {
        let a = pi.sample(x, rng);
        if beats(row, a, best) {
            best = a;
        }
    }
    Ok(best)
}

/// Exact distribution of [`best_of_n`]: `P(a) = F(a)^n − F⁻(a)^n` where `F`
/// is the CDF under the best-of-n ordering.
pub fn best_of_n_policy(pi: &TabularPolicy, rewards: &RewardTable, n: usize) -> Result<TabularPolicy> {
    if n == 0 {
        return Err(Error::Parameter("best-of-n needs n ≥ 1".into()));
    }
    let rows = (0..pi.num_contexts())
        .map(|x| {
            let (p, r) = (pi.row(x), rewards.row(x));
            let k = p.len();
            let probs: Vec<f64> = (0..k)
                .map(|a| {
                    let below: f64 = (0..k).filter(|&b| beats(r, a, b)).map(|b| p[b]).sum();
                    (below + p[a]).min(1.0).powi(n as i32) - below.powi(n as i32)
                })
                .map(|v| v.max(0.0))
                .collect();
            normalize(probs)
        })
        .collect();
    Ok(TabularPolicy { rows })
}

/// Decreasing KL-coefficient schedule `η₁ > … > η_N` for multi-step
/// rejection sampling; `η₀ = ∞` (the reference policy) is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaLadder {
    etas: Vec<f64>,
}

impl EtaLadder {
    pub fn new(etas: Vec<f64>, target_eta: f64) -> Result<Self> {
        if etas.is_empty() {
            return Err(Error::Parameter("ladder needs at least one step".into()));
        }
        if etas.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(Error::Parameter("ladder entries must be positive and finite".into()));
        }
        if etas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Parameter("ladder must be strictly decreasing".into()));
        }
        let last = *etas.last().unwrap();
        if (last - target_eta).abs() > 1e-12 {
            return Err(Error::Parameter(format!("ladder ends at {last}, target is {target_eta}")));
        }
        Ok(Self { etas })
    }

    /// `N` steps with `1/η_i = i/(N·η)`, i.e. `η_i = N·η/i`.
    pub fn linear_inverse(target_eta: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Parameter("ladder needs at least one step".into()));
        }
        let n = steps as f64;
        let mut etas: Vec<f64> = (1..=steps).map(|i| n * target_eta / i as f64).collect();
        *etas.last_mut().unwrap() = target_eta;
        Self::new(etas, target_eta)
    }

    /// `N = ⌈r_x/η⌉ + 1` steps on the linear-inverse schedule.
    pub fn for_reward_gap(target_eta: f64, reward_gap: f64) -> Result<Self> {
        Self::linear_inverse(target_eta, recommended_steps(reward_gap, target_eta))
    }

    pub fn etas(&self) -> &[f64] {
        &self.etas
    }

    pub fn len(&self) -> usize {
        self.etas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.etas.is_empty()
    }

    pub fn target(&self) -> f64 {
        *self.etas.last().unwrap()
    }
}

pub fn recommended_steps(reward_gap: f64, eta: f64) -> usize {
    (reward_gap / eta).max(0.0).ceil() as usize + 1
}

/// Reward gap `r_x` defined by `E_{a~π0} exp((r(x,a) − R(x))/η) = exp(−r_x/η)`,
/// with `R(x)` the largest reward on the support of `π0(·|x)`.
pub fn reward_gap(rewards: &[f64], pi0: &[f64], eta: f64) -> f64 {
    let best = support_max(rewards, pi0);
    let logits: Vec<f64> = rewards
        .iter()
        .zip(pi0)
        .filter(|(_, &p)| p > 0.0)
        .map(|(r, p)| p.ln() + (r - best) / eta)
        .collect();
    -eta * log_sum_exp(&logits)
}

/// `d0`-weighted average of the per-context reward gaps.
pub fn average_reward_gap(rewards: &RewardTable, pi0: &TabularPolicy, d0: &[f64], eta: f64) -> f64 {
    d0.iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(x, &w)| w * reward_gap(rewards.row(x), pi0.row(x), eta))
        .sum()
}

fn support_max(rewards: &[f64], probs: &[f64]) -> f64 {
    rewards
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p > 0.0)
        .map(|(r, _)| *r)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Outcome of one rejection-sampling stage at one context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsoStepReport {
    pub step: usize,
    pub context: usize,
    /// KL coefficient of the proposal; `None` is the reference policy (`η = ∞`).
    pub proposal_eta: Option<f64>,
    pub target_eta: f64,
    pub candidates: usize,
    pub accepted: usize,
    /// `accepted / candidates`, undefined for an empty budget.
    pub acceptance_rate: Option<f64>,
    /// Exact density-ratio bound `M = max_a q(a|x)/p(a|x)`.
    pub bound_m: f64,
}

impl RsoStepReport {
    /// Exact expected acceptance probability, `1/M`.
    pub fn expected_rate(&self) -> f64 {
        1.0 / self.bound_m
    }
}

/// Acceptance probabilities `q(a)/(M·p(a)) = exp((r(a) − R)·Δ)` for moving a
/// Gibbs proposal at `proposal_eta` to the target at `target_eta`, with
/// `Δ = 1/η_target − 1/η_proposal`. Also returns `M`.
fn acceptance_table(proposal: &[f64], rewards: &[f64], delta: f64) -> (Vec<f64>, f64) {
    let best = support_max(rewards, proposal);
    let accept: Vec<f64> = rewards
        .iter()
        .zip(proposal)
        .map(|(r, &p)| if p > 0.0 { ((r - best) * delta).exp() } else { 0.0 })
        .collect();
    let expected: f64 = accept.iter().zip(proposal).map(|(a, p)| a * p).sum();
    (accept, 1.0 / expected)
}

fn inverse_delta(target_eta: f64, proposal_eta: Option<f64>) -> Result<f64> {
    if !(target_eta > 0.0) {
        return Err(Error::Parameter(format!("target eta must be positive, got {target_eta}")));
    }
    match proposal_eta {
        None => Ok(1.0 / target_eta),
        Some(p) if p >= target_eta => Ok(1.0 / target_eta - 1.0 / p),
        Some(p) => Err(Error::Parameter(format!("proposal eta {p} is below target eta {target_eta}"))),
    }
}

/// Rejection sampling from the Gibbs policy at `proposal_eta` (the `proposal`
/// row itself) toward the Gibbs policy at `target_eta` for context `x`.
///
/// Accepted actions are exact draws from the target.
#[allow(clippy::too_many_arguments)]
pub fn rejection_sample_step<R: Rng + ?Sized>(
    proposal: &TabularPolicy,
    target_eta: f64,
    proposal_eta: Option<f64>,
    rewards: &RewardTable,
    x: usize,
    budget: usize,
    step: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, RsoStepReport)> {
    let delta = inverse_delta(target_eta, proposal_eta)?;
    let row = proposal.row(x);
    let (accept, bound_m) = acceptance_table(row, rewards.row(x), delta);
    let cdf: Vec<f64> = row
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let last = row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1);
    let mut accepted = Vec::new();
    for _ in 0..budget {
        let u: f64 = rng.random();
        let a = cdf.partition_point(|&c| c <= u).min(last);
        if rng.random::<f64>() < accept[a] {
            accepted.push(a);
        }
    }
    let report = RsoStepReport {
        step,
        context: x,
        proposal_eta,
        target_eta,
        candidates: budget,
        accepted: accepted.len(),
        acceptance_rate: (budget > 0).then(|| accepted.len() as f64 / budget as f64),
        bound_m,
    };
    Ok((accepted, report))
}

/// How stage proposals are formed in [`multistep_rso`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalMode {
    /// Stage `i` draws from the exact Gibbs policy at `η_{i−1}`.
    #[default]
    Exact,
    /// Stage `i` resamples uniformly from the samples accepted at stage `i−1`.
    EmpiricalChain,
}

/// Final accepted samples per context plus every stage report.
#[derive(Debug, Clone)]
pub struct RsoOutcome {
    pub samples: Vec<Vec<usize>>,
    pub reports: Vec<RsoStepReport>,
}

impl RsoOutcome {
    /// Smallest per-step empirical acceptance over all stages and contexts.
    pub fn min_acceptance(&self) -> f64 {
        self.reports.iter().filter_map(|r| r.acceptance_rate).fold(f64::INFINITY, f64::min)
    }
}

/// Multi-step rejection sampling along `ladder`, run independently per context.
pub fn multistep_rso<R: Rng + ?Sized>(
    pi0: &TabularPolicy,
    rewards: &RewardTable,
    ladder: &EtaLadder,
    budget_per_step: usize,
    mode: ProposalMode,
    rng: &mut R,
) -> Result<RsoOutcome> {
    if budget_per_step == 0 {
        return Err(Error::Parameter("budget per step must be at least 1".into()));
    }
    let mut samples = Vec::with_capacity(pi0.num_contexts());
    let mut reports = Vec::new();
    for x in 0..pi0.num_contexts() {
        let mut previous: Option<(f64, Vec<usize>)> = None;
        for (i, &eta) in ladder.etas().iter().enumerate() {
            let proposal_eta = previous.as_ref().map(|(e, _)| *e);
            let (accepted, report) = match (mode, &previous) {
                (ProposalMode::EmpiricalChain, Some((_, pool))) => {
                    chain_step(pi0, pool, eta, proposal_eta, rewards, x, budget_per_step, i + 1, rng)?
                }
                _ => {
                    let proposal = match proposal_eta {
                        None => pi0.clone(),
                        Some(pe) => gibbs_oracle(rewards, pi0, pe)?,
                    };
                    rejection_sample_step(&proposal, eta, proposal_eta, rewards, x, budget_per_step, i + 1, rng)?
                }
            };
            if accepted.is_empty() {
                return Err(Error::EmptyStage(Box::new(report)));
            }
            reports.push(report);
            previous = Some((eta, accepted));
        }
        samples.push(previous.map(|(_, s)| s).unwrap_or_default());
    }
    Ok(RsoOutcome { samples, reports })
}

#[allow(clippy::too_many_arguments)]
fn chain_step<R: Rng + ?Sized>(
    pi0: &TabularPolicy,
    pool: &[usize],
    target_eta: f64,
    proposal_eta: Option<f64>,
    rewards: &RewardTable,
    x: usize,
    budget: usize,
    step: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, RsoStepReport)> {
    let delta = inverse_delta(target_eta, proposal_eta)?;
    // the bound refers to the exact proposal the pool approximates
    let exact = match proposal_eta {
        None => pi0.row(x).to_vec(),
        Some(pe) => gibbs_row(rewards.row(x), pi0.row(x), pe)?,
    };
    let (accept, bound_m) = acceptance_table(&exact, rewards.row(x), delta);
    let mut accepted = Vec::new();
    for _ in 0..budget {
        let a = pool[rng.random_range(0..pool.len())];
        if rng.random::<f64>() < accept[a] {
            accepted.push(a);
        }
    }
    let report = RsoStepReport {
        step,
        context: x,
        proposal_eta,
        target_eta,
        candidates: budget,
        accepted: accepted.len(),
        acceptance_rate: Some(accepted.len() as f64 / budget as f64),
        bound_m,
    };
    Ok((accepted, report))
}
