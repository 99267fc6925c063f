use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gibbs_of_theta, EnhancerMode, GshfConfig, GshfOption};
use crate::env::{sample_excluding, sample_unit_vector, BanditInstance, Origin, PreferenceTuple, RewardTable, Vector};
use crate::error::{Error, Result};
use crate::policy::{best_of_n_policy, gibbs_row, TabularPolicy};
use crate::reward::{fit_mle_from, CovMatrix};
use crate::solver::project_ball;

const ENHANCER_SCALES: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhancerKind {
    Reference,
    Explore,
    BestOfN,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnhancerDiagnostics {
    /// Candidates evaluated, the main agent included.
    pub candidates: usize,
    pub feasible: usize,
    /// `Γᵐₜ` of the selection.
    pub uncertainty: f64,
    /// Index into the supplied candidate list; `None` when the main agent won.
    pub selected: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub theta: Vec<f64>,
    pub mle_converged: bool,
    pub main_policy: TabularPolicy,
    pub enhancer_policy: TabularPolicy,
    pub enhancer_kind: EnhancerKind,
    pub batch: Vec<PreferenceTuple>,
    /// `Σ_{t,m}` in row-major order.
    pub cov: Vec<f64>,
    pub beta: f64,
    pub value_main: f64,
    pub value_enhancer: f64,
    pub subopt_main: f64,
    pub subopt_enhancer: f64,
    /// `Γᵐₜ(λ, π¹ₜ, π²ₜ)`.
    pub enhancer_uncertainty: f64,
    /// Left side of the confidence-set test for π*: `η·Σᵢ KL(π*‖π¹ₜ)(xᵢ)`.
    pub pi_star_kl: f64,
    /// Right side: `β·Σᵢ ‖φ(xᵢ,π*) − φ(xᵢ,π¹ₜ)‖_{Σ_{t,m}⁻¹}`.
    pub pi_star_bonus: f64,
    pub pi_star_in_set: bool,
    /// `‖E[φ(π*) − φ(π_ref)]‖` in the inverse of `λI + Σ zzᵀ` over offline data and `D^{1:t}`.
    pub coverage_bonus: f64,
    pub validation_value: f64,
    pub enhancer: Option<EnhancerDiagnostics>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OnlineTrajectory {
    pub records: Vec<IterationRecord>,
    pub offline_size: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub beta: f64,
    pub optimal_value: f64,
    /// Index of the main agent with the best validation value.
    pub output_index: usize,
}

impl OnlineTrajectory {
    pub fn output_policy(&self) -> &TabularPolicy {
        &self.records[self.output_index].main_policy
    }

    pub fn min_suboptimality(&self) -> f64 {
        self.records.iter().map(|r| r.subopt_main).fold(f64::INFINITY, f64::min)
    }

    /// Online preference data in collection order.
    pub fn online_data(&self) -> impl Iterator<Item = &PreferenceTuple> {
        self.records.iter().flat_map(|r| r.batch.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretMetrics {
    /// `Σₜ [J(π*) − J(π¹ₜ)]`.
    pub regret: f64,
    /// `Σₜ [2J(π*) − J(π¹ₜ) − J(π²ₜ)]/2`.
    pub average_regret: f64,
    pub subopt_main: Vec<f64>,
    pub subopt_enhancer: Vec<f64>,
}

fn context_counts(contexts: &[usize], n: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n];
    for &x in contexts {
        counts[x] += 1.0;
    }
    counts
}

fn row_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(pi, _)| **pi > 0.0).map(|(pi, qi)| pi * (pi / qi).ln()).sum()
}

fn row_mean(instance: &BanditInstance, x: usize, row: &[f64]) -> Vector {
    let mut u = Vector::zeros(instance.dim());
    for (f, p) in instance.features()[x].iter().zip(row) {
        u.axpy(*p, f, 1.0);
    }
    u
}

/// Candidate parameters `θ + s·β·Σ^{-1/2}·u`, projected onto the B-ball, for
/// `u` over `±eⱼ` and `random` random unit directions and `s ∈ {1/2, 1, 2}`.
pub fn enhancer_candidates<R: Rng + ?Sized>(
    theta: &Vector,
    cov: &CovMatrix,
    beta: f64,
    random: usize,
    bound: f64,
    rng: &mut R,
) -> Vec<Vector> {
    let d = theta.len();
    let root = cov.inv_sqrt();
    let mut dirs = Vec::with_capacity(2 * d + random);
    for j in 0..d {
        for sign in [1.0, -1.0] {
            let mut e = Vector::zeros(d);
            e[j] = sign;
            dirs.push(e);
        }
    }
    dirs.extend((0..random).map(|_| sample_unit_vector(d, rng)));
    let mut out = Vec::with_capacity(dirs.len() * ENHANCER_SCALES.len());
    for u in &dirs {
        let step = &root * u * beta;
        for s in ENHANCER_SCALES {
            out.push(project_ball(&(theta + &step * s), bound));
        }
    }
    out
}

/// Picks the Gibbs policy among `candidates` (and the main agent) that
/// maximizes `Γᵐₜ = β·Σᵢ ‖φ(xᵢ,π̃) − φ(xᵢ,π¹)‖_{Σ⁻¹}` subject to
/// `η·Σᵢ KL(π̃‖π¹)(xᵢ) ≤ Γᵐₜ`. Ties keep the earlier candidate.
#[allow(clippy::too_many_arguments)]
pub fn enhancer_select_from(
    instance: &BanditInstance,
    main_policy: &TabularPolicy,
    candidates: &[Vector],
    cov: &CovMatrix,
    contexts: &[usize],
    beta: f64,
    eta: f64,
) -> Result<(TabularPolicy, EnhancerDiagnostics)> {
    instance.check_shape(main_policy)?;
    let counts = context_counts(contexts, instance.num_contexts());
    let active: Vec<usize> = (0..counts.len()).filter(|&x| counts[x] > 0.0).collect();
    let main_means: Vec<Vector> = active.iter().map(|&x| row_mean(instance, x, main_policy.row(x))).collect();
    let mut best: (f64, Option<usize>) = (0.0, None);
    let mut feasible = 0;
    for (i, th) in candidates.iter().enumerate() {
        let mut kl = 0.0;
        let mut unc = 0.0;
        for (&x, mean) in active.iter().zip(&main_means) {
            let r: Vec<f64> = instance.features()[x].iter().map(|f| f.dot(th)).collect();
            let row = gibbs_row(&r, instance.pi0().row(x), eta)?;
            kl += counts[x] * row_kl(&row, main_policy.row(x));
            unc += counts[x] * cov.inv_norm(&(row_mean(instance, x, &row) - mean))?;
        }
        let unc = beta * unc;
        if eta * kl <= unc + 1e-12 {
            feasible += 1;
            if unc > best.0 {
                best = (unc, Some(i));
            }
        }
    }
    let policy = match best.1 {
        Some(i) => gibbs_of_theta(instance, &candidates[i], eta)?,
        None => main_policy.clone(),
    };
    let diag = EnhancerDiagnostics {
        candidates: candidates.len() + 1,
        feasible: feasible + 1,
        uncertainty: best.0,
        selected: best.1,
    };
    Ok((policy, diag))
}

/// Uncertainty-seeking enhancer around `θₜ` on the batch `contexts`.
pub fn enhancer_select<R: Rng + ?Sized>(
    instance: &BanditInstance,
    main_policy: &TabularPolicy,
    theta_t: &Vector,
    cov: &CovMatrix,
    contexts: &[usize],
    config: &GshfConfig,
    rng: &mut R,
) -> Result<(TabularPolicy, EnhancerDiagnostics)> {
    let beta = config.online_beta(instance)?;
    let candidates = enhancer_candidates(theta_t, cov, beta, config.enhancer_candidates, instance.bound(), rng);
    enhancer_select_from(instance, main_policy, &candidates, cov, contexts, beta, config.eta)
}

/// Online (empty `offline_data`) or hybrid iterative GSHF.
///
/// `Σ_{t,m}` counts offline comparisons with the same `1/m` weight as online
/// ones. A non-converged MLE is flagged in the record rather than aborting.
pub fn online_gshf<R: Rng + ?Sized>(
    instance: &BanditInstance,
    offline_data: &[PreferenceTuple],
    config: &GshfConfig,
    rng: &mut R,
) -> Result<OnlineTrajectory> {
    config.validate()?;
    let m = config.batch_size;
    let d = instance.dim();
    let n_ctx = instance.num_contexts();
    let eta = config.eta;
    let beta = config.online_beta(instance)?;
    let reference = config.reference.resolve(instance)?;
    let pi_star = instance.optimal_policy();
    let j_star = instance.optimal_value();
    let true_rewards = instance.true_rewards();
    let ref_gap = instance.expected_feature(&pi_star) - instance.expected_feature(&reference);

    let validation: Vec<usize> = (0..config.validation_contexts).map(|_| instance.sample_context(rng)).collect();
    let validation = context_counts(&validation, n_ctx);

    let mut data = offline_data.to_vec();
    let mut scatter = DMatrix::zeros(d, d);
    for t in offline_data {
        let z = instance.feature_diff(t)?;
        scatter.ger(1.0, &z, &z, 1.0);
    }
    let mut theta = Vector::zeros(d);
    let mut records: Vec<IterationRecord> = Vec::with_capacity(config.iterations);

    for t in 1..=config.iterations {
        let contexts: Vec<usize> = (0..m).map(|_| instance.sample_context(rng)).collect();
        let counts = context_counts(&contexts, n_ctx);
        let mle_converged = if data.is_empty() {
            true
        } else {
            let rep = fit_mle_from(&data, instance, &config.mle, Some(&theta))?;
            theta = rep.theta_hat.theta();
            rep.converged
        };
        let main = gibbs_of_theta(instance, &theta, eta)?;
        let cov = CovMatrix::from_scatter(&scatter, config.lambda, Some(m))?;

        let (enhancer, kind, diag) = match (config.option, config.enhancer) {
            (GshfOption::I, _) => (reference.clone(), EnhancerKind::Reference, None),
            (GshfOption::II, EnhancerMode::Explore) => {
                let (pi, diag) = enhancer_select(instance, &main, &theta, &cov, &contexts, config, rng)?;
                (pi, EnhancerKind::Explore, Some(diag))
            }
            (GshfOption::II, EnhancerMode::BestOfN { n }) => {
                let pi = best_of_n_policy(&main, &RewardTable::linear(instance, &theta), n)?;
                (pi, EnhancerKind::BestOfN, None)
            }
        };

        let mut enhancer_uncertainty = 0.0;
        let mut pi_star_kl = 0.0;
        let mut pi_star_bonus = 0.0;
        for x in (0..n_ctx).filter(|&x| counts[x] > 0.0) {
            let main_mean = instance.mean_feature(&main, x);
            enhancer_uncertainty += counts[x] * cov.inv_norm(&(instance.mean_feature(&enhancer, x) - &main_mean))?;
            pi_star_kl += counts[x] * row_kl(pi_star.row(x), main.row(x));
            pi_star_bonus += counts[x] * cov.inv_norm(&(instance.mean_feature(&pi_star, x) - &main_mean))?;
        }
        enhancer_uncertainty *= beta;
        pi_star_kl *= eta;
        pi_star_bonus *= beta;

        let mut batch = Vec::with_capacity(m);
        for &x in &contexts {
            let a1 = main.sample(x, rng);
            let a2 = sample_excluding(enhancer.row(x), instance.pi0().row(x), a1, rng);
            let y = instance.sample_preference(x, a1, a2, rng)?;
            let tuple = PreferenceTuple::new(x, a1, a2, y, Origin::Iteration(t))?;
            let z = instance.feature_diff(&tuple)?;
            scatter.ger(1.0, &z, &z, 1.0);
            batch.push(tuple);
        }
        let coverage_bonus = CovMatrix::from_scatter(&scatter, config.lambda, None)?.inv_norm(&ref_gap)?;

        let value_main = instance.evaluate_value(&main)?;
        let value_enhancer = instance.evaluate_value(&enhancer)?;
        let mut validation_value = 0.0;
        for x in (0..n_ctx).filter(|&x| validation[x] > 0.0) {
            validation_value += validation[x] * instance.context_value(&main, &true_rewards, x)?;
        }
        validation_value /= config.validation_contexts as f64;

        data.extend(batch.iter().cloned());
        records.push(IterationRecord {
            t,
            theta: theta.as_slice().to_vec(),
            mle_converged,
            main_policy: main,
            enhancer_policy: enhancer,
            enhancer_kind: kind,
            batch,
            cov: cov.matrix().transpose().as_slice().to_vec(),
            beta,
            value_main,
            value_enhancer,
            subopt_main: j_star - value_main,
            subopt_enhancer: j_star - value_enhancer,
            enhancer_uncertainty,
            pi_star_kl,
            pi_star_bonus,
            pi_star_in_set: pi_star_kl <= pi_star_bonus + 1e-12,
            coverage_bonus,
            validation_value,
            enhancer: diag,
        });
    }

    let mut output_index = 0;
    for (i, r) in records.iter().enumerate() {
        if r.validation_value > records[output_index].validation_value {
            output_index = i;
        }
    }
    Ok(OnlineTrajectory {
        records,
        offline_size: offline_data.len(),
        batch_size: m,
        lambda: config.lambda,
        beta,
        optimal_value: j_star,
        output_index,
    })
}

/// Regret sums from the values stored in the trajectory.
pub fn regret_metrics(trajectory: &OnlineTrajectory, instance: &BanditInstance) -> RegretMetrics {
    let j_star = instance.optimal_value();
    let subopt_main: Vec<f64> = trajectory.records.iter().map(|r| j_star - r.value_main).collect();
    let subopt_enhancer: Vec<f64> = trajectory.records.iter().map(|r| j_star - r.value_enhancer).collect();
    let regret = subopt_main.iter().sum();
    let average_regret = subopt_main.iter().zip(&subopt_enhancer).map(|(a, b)| (a + b) / 2.0).sum();
    RegretMetrics { regret, average_regret, subopt_main, subopt_enhancer }
}

/// Fully sequential online learning (`m = 1`) from scratch, with its regrets.
pub fn sequential_online<R: Rng + ?Sized>(
    instance: &BanditInstance,
    config: &GshfConfig,
    rng: &mut R,
) -> Result<(OnlineTrajectory, RegretMetrics)> {
    if config.batch_size != 1 {
        return Err(Error::Parameter(format!("sequential mode needs m = 1, got {}", config.batch_size)));
    }
    let trajectory = online_gshf(instance, &[], config, rng)?;
    let metrics = regret_metrics(&trajectory, instance);
    Ok((trajectory, metrics))
}
