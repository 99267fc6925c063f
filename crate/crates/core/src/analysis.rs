//! Diagnostics: exact identity checks, elliptical-potential
//! counting, confidence-set coverage, coverage coefficients and the
//! population DPO study.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::{online_gshf, GshfConfig, GshfOption, OfflineDiagnostics};
use crate::env::{sigmoid, BanditInstance, PreferenceTuple, RewardTable, Vector};
use crate::error::{Error, Result};
use crate::policy::{expected_kl, gibbs_oracle, kl_divergence, TabularPolicy};
use crate::reward::covariance;
use crate::rng::substream;

/// Slack in the `satisfied` test.
pub const REPORT_SLACK: f64 = 1e-9;

/// One evaluated inequality `lhs ≤ rhs`.
///
/// Identity checks report the absolute discrepancy as `lhs` against a
/// tolerance `rhs`, with both raw sides under `left` and `right` in `metadata`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    pub slack: f64,
    pub metadata: BTreeMap<String, f64>,
}

impl BoundReport {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            satisfied: lhs <= rhs + REPORT_SLACK,
            slack: rhs - lhs,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.metadata.insert(key.to_string(), value);
        self
    }

    fn identity(name: &str, left: f64, right: f64, tolerance: f64) -> Self {
        Self::new(name, (left - right).abs(), tolerance).with("left", left).with("right", right)
    }
}

pub const IDENTITY_TOLERANCE: f64 = 1e-10;

fn expect(pi: &TabularPolicy, r: &RewardTable, x: usize) -> f64 {
    pi.row(x).iter().zip(r.row(x)).map(|(p, v)| p * v).sum()
}

fn check_table(instance: &BanditInstance, r: &RewardTable) -> Result<()> {
    if r.num_contexts() != instance.num_contexts()
        || (0..r.num_contexts()).any(|x| r.row(x).len() != instance.num_actions(x))
    {
        return Err(Error::Input("reward table does not match the instance".into()));
    }
    Ok(())
}

/// Both sides of the five-term decomposition of `J(π) − J(π̂)` under an
/// arbitrary surrogate reward `r̂`.
pub fn value_decomposition_check(
    pi: &TabularPolicy,
    pi_hat: &TabularPolicy,
    r_hat: &RewardTable,
    instance: &BanditInstance,
) -> Result<BoundReport> {
    instance.check_shape(pi)?;
    instance.check_shape(pi_hat)?;
    check_table(instance, r_hat)?;
    let left = instance.evaluate_value(pi)? - instance.evaluate_value(pi_hat)?;
    let r_star = instance.true_rewards();
    let eta = instance.eta();
    let mut right = 0.0;
    for (x, w) in instance.d0().iter().enumerate() {
        let reward_err_pi = expect(pi, &r_star, x) - expect(pi, r_hat, x);
        let reward_err_hat = expect(pi_hat, r_hat, x) - expect(pi_hat, &r_star, x);
        let surrogate_gap = expect(pi, r_hat, x) - expect(pi_hat, r_hat, x);
        let kl_gap = eta * kl_divergence(pi_hat, instance.pi0(), x)? - eta * kl_divergence(pi, instance.pi0(), x)?;
        right += w * (reward_err_pi + reward_err_hat + surrogate_gap + kl_gap);
    }
    Ok(BoundReport::identity("value_decomposition", left, right, IDENTITY_TOLERANCE))
}

/// With `π̂ = Gibbs(r̂)`: `E[E_π r̂ − E_π̂ r̂ + η·KL(π̂‖π0) − η·KL(π‖π0)]`
/// against `−η·E KL(π‖π̂)`.
pub fn opt_error_identity_check(
    pi: &TabularPolicy,
    r_hat: &RewardTable,
    instance: &BanditInstance,
) -> Result<BoundReport> {
    instance.check_shape(pi)?;
    check_table(instance, r_hat)?;
    let eta = instance.eta();
    let pi_hat = gibbs_oracle(r_hat, instance.pi0(), eta)?;
    let (mut left, mut right) = (0.0, 0.0);
    for (x, w) in instance.d0().iter().enumerate() {
        left += w
            * (expect(pi, r_hat, x) - expect(&pi_hat, r_hat, x) + eta * kl_divergence(&pi_hat, instance.pi0(), x)?
                - eta * kl_divergence(pi, instance.pi0(), x)?);
        right -= w * eta * kl_divergence(pi, &pi_hat, x)?;
    }
    Ok(BoundReport::identity("policy_optimization_error", left, right, IDENTITY_TOLERANCE))
}

/// Offline suboptimality certificate against `π*`: `lhs = J(π*) − J(π̂)` and
/// `rhs = 2β·‖E φ(π*) − ν‖_{Σ⁻¹}` (Option I) or `2β·E_{π*}‖φ − ν‖_{Σ⁻¹}`
/// (Option II). The Option II bound also admits `−η·E KL(π*‖π̂)`, which is
/// stored as `tight_rhs` without being used for `satisfied`.
pub fn offline_certificate(
    pi_hat: &TabularPolicy,
    data: &[PreferenceTuple],
    instance: &BanditInstance,
    diagnostics: &OfflineDiagnostics,
) -> Result<BoundReport> {
    instance.check_shape(pi_hat)?;
    let cov = covariance(data, instance, diagnostics.lambda, None)?;
    let nu = Vector::from_column_slice(&diagnostics.nu);
    let pi_star = instance.optimal_policy();
    let gap = instance.suboptimality(pi_hat)?;
    let beta = diagnostics.beta;
    let report = match diagnostics.option {
        GshfOption::I => {
            let bonus = cov.inv_norm(&(instance.expected_feature(&pi_star) - &nu))?;
            BoundReport::new("offline_certificate", gap, 2.0 * beta * bonus).with("bonus", bonus)
        }
        GshfOption::II => {
            let mut bonus = 0.0;
            for (x, &w) in instance.d0().iter().enumerate() {
                for (a, f) in instance.features()[x].iter().enumerate() {
                    let p = pi_star.prob(x, a);
                    if w > 0.0 && p > 0.0 {
                        bonus += w * p * cov.inv_norm(&(f - &nu))?;
                    }
                }
            }
            let kl = expected_kl(&pi_star, pi_hat, instance.d0())?;
            BoundReport::new("offline_certificate", gap, 2.0 * beta * bonus)
                .with("bonus", bonus)
                .with("tight_rhs", 2.0 * beta * bonus - instance.eta() * kl)
        }
    };
    Ok(report.with("beta", beta))
}

/// `3d/log(1+c²) · log(1 + 1/(λ·log(1+c²)))`.
pub fn elliptical_potential_bound(dim: usize, lambda: f64, c: f64) -> f64 {
    let l = (c * c).ln_1p();
    3.0 * dim as f64 / l * (1.0 / (lambda * l)).ln_1p()
}

/// Counts steps with `‖z_t‖_{Z_t⁻¹} > c`, `Z_t = λI + Σ_{s<t} z_s z_sᵀ`.
///
/// `Z_t` is refactored from the accumulated sum at every step so that exact
/// boundary cases (integer-valued sums) are not perturbed by update drift.
pub fn elliptical_potential_count(diffs: &[Vector], lambda: f64, c: f64) -> Result<(usize, f64, BoundReport)> {
    if !(lambda > 0.0) || !(c > 0.0) {
        return Err(Error::Parameter(format!("λ and c must be positive, got {lambda}, {c}")));
    }
    let Some(first) = diffs.first() else {
        return Ok((0, 0.0, BoundReport::new("elliptical_potential", 0.0, 0.0)));
    };
    let d = first.len();
    let mut z_mat = DMatrix::identity(d, d) * lambda;
    let mut count = 0;
    for (t, z) in diffs.iter().enumerate() {
        if z.len() != d {
            return Err(Error::Input(format!("vector {t} has dimension {}, expected {d}", z.len())));
        }
        if z.norm() > 1.0 + 1e-12 {
            return Err(Error::Input(format!("vector {t} has norm {} > 1", z.norm())));
        }
        let chol = Cholesky::new(z_mat.clone()).ok_or_else(|| Error::Numeric("Z_t lost definiteness".into()))?;
        if z.dot(&chol.solve(z)) > c * c {
            count += 1;
        }
        z_mat.ger(1.0, z, z, 1.0);
    }
    let bound = elliptical_potential_bound(d, lambda, c);
    let report = BoundReport::new("elliptical_potential", count as f64, bound)
        .with("dim", d as f64)
        .with("lambda", lambda)
        .with("c", c)
        .with("steps", diffs.len() as f64);
    Ok((count, bound, report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub fraction: f64,
    pub satisfied: usize,
    pub total: usize,
    pub reports: Vec<BoundReport>,
}

/// Replays `trials` online runs and tests `π* ∈ Π_t` at every iteration.
/// Trial `i` runs on its own stream derived from a seed drawn from `rng`.
pub fn confidence_coverage_mc<R: Rng + ?Sized>(
    instance: &BanditInstance,
    config: &GshfConfig,
    trials: usize,
    rng: &mut R,
) -> Result<CoverageSummary> {
    if trials == 0 {
        return Err(Error::Parameter("need at least one trial".into()));
    }
    let mut reports = Vec::new();
    let mut satisfied = 0;
    for trial in 0..trials {
        let seed: u64 = rng.random();
        let traj = online_gshf(instance, &[], config, &mut substream(seed, &[]))?;
        for r in &traj.records {
            satisfied += usize::from(r.pi_star_in_set);
            reports.push(
                BoundReport::new("confidence_set", r.pi_star_kl, r.pi_star_bonus)
                    .with("trial", trial as f64)
                    .with("t", r.t as f64),
            );
        }
    }
    let total = reports.len();
    Ok(CoverageSummary { fraction: satisfied as f64 / total as f64, satisfied, total, reports })
}

/// `C_cov = (mT)^{1−α} · ‖E_{d0}[φ(x,π*) − φ(x,π_ref)]‖_{Σ_off⁻¹}`, the
/// smallest constant for which partial coverage holds at this α.
pub fn coverage_coefficient(
    offline_data: &[PreferenceTuple],
    pi_star: &TabularPolicy,
    pi_ref: &TabularPolicy,
    instance: &BanditInstance,
    alpha: f64,
    total_online: usize,
    lambda: f64,
) -> Result<(f64, BoundReport)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("α must lie in (0,1), got {alpha}")));
    }
    instance.check_shape(pi_star)?;
    instance.check_shape(pi_ref)?;
    let cov = covariance(offline_data, instance, lambda, None)?;
    let gap = instance.expected_feature(pi_star) - instance.expected_feature(pi_ref);
    let norm = cov.inv_norm(&gap)?;
    let scale = (total_online as f64).powf(1.0 - alpha);
    let c_cov = scale * norm;
    let report = BoundReport::new("coverage_coefficient", norm, c_cov / scale)
        .with("alpha", alpha)
        .with("total_online", total_online as f64)
        .with("c_cov", c_cov)
        .with("offline_size", offline_data.len() as f64);
    Ok((c_cov, report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpoContextReport {
    pub context: usize,
    /// Actions with positive behavior probability.
    pub covered: Vec<usize>,
    /// Largest `|(π_θ(a)/π_θ(b)) / (π*(a)/π*(b)) − 1|` over covered pairs.
    pub max_ratio_error: f64,
    /// Loss gradient with respect to each uncovered action's logit.
    pub off_support_gradient: Vec<(usize, f64)>,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpoPopulationReport {
    pub policy: TabularPolicy,
    pub contexts: Vec<DpoContextReport>,
    pub max_ratio_error: f64,
    pub max_off_support_gradient: f64,
    pub ratio_report: BoundReport,
}

pub const DPO_RATIO_TOLERANCE: f64 = 1e-6;

/// Exact population DPO loss over behavior-policy pairs, minimized per
/// context over tabular logits.
///
/// Covered logits are found by Newton's method with the first covered logit
/// pinned (the loss only sees differences). Uncovered logits are set to the
/// maximum-entropy completion, the limit of a vanishing entropy regularizer.
pub fn dpo_population_check(behavior: &TabularPolicy, instance: &BanditInstance) -> Result<DpoPopulationReport> {
    instance.check_shape(behavior)?;
    let eta = instance.eta();
    let r_star = instance.true_rewards();
    let pi_star = instance.optimal_policy();
    let mut rows = Vec::with_capacity(instance.num_contexts());
    let mut contexts = Vec::with_capacity(instance.num_contexts());
    for x in 0..instance.num_contexts() {
        let b = behavior.row(x);
        let pi0 = instance.pi0().row(x);
        let k = b.len();
        let covered: Vec<usize> = (0..k).filter(|&a| b[a] > 0.0).collect();
        let (v, iterations) = newton_covered(&covered, b, r_star.row(x), eta)?;

        // covered block ∝ π0·e^v, then the entropy-maximizing split with the rest
        let log_w: Vec<f64> = covered.iter().zip(&v).map(|(&a, va)| pi0[a].ln() + va).collect();
        let shape = crate::env::softmax(&log_w);
        let uncovered: Vec<usize> = (0..k).filter(|&a| b[a] == 0.0).collect();
        let mut row = vec![0.0; k];
        if uncovered.is_empty() {
            for (&a, p) in covered.iter().zip(&shape) {
                row[a] = *p;
            }
        } else {
            let h: f64 = -shape.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>();
            // off-support mass q solves q/(1−q) = k_off·e^{−H(shape)}
            let odds = uncovered.len() as f64 * (-h).exp();
            let q = if covered.is_empty() { 1.0 } else { odds / (1.0 + odds) };
            for (&a, p) in covered.iter().zip(&shape) {
                row[a] = (1.0 - q) * p;
            }
            for &a in &uncovered {
                row[a] = q / uncovered.len() as f64;
            }
        }

        let mut max_ratio_error: f64 = 0.0;
        for &a in &covered {
            for &c in &covered {
                if a != c {
                    let fitted = row[a] / row[c];
                    let target = pi_star.prob(x, a) / pi_star.prob(x, c);
                    max_ratio_error = max_ratio_error.max((fitted / target - 1.0).abs());
                }
            }
        }
        let grad = population_gradient(&row, pi0, b, r_star.row(x), eta);
        let off_support_gradient = uncovered.iter().map(|&a| (a, grad[a])).collect();
        contexts.push(DpoContextReport { context: x, covered, max_ratio_error, off_support_gradient, newton_iterations: iterations });
        rows.push(row);
    }
    let max_ratio_error = contexts.iter().map(|c| c.max_ratio_error).fold(0.0, f64::max);
    let max_off_support_gradient = contexts
        .iter()
        .flat_map(|c| c.off_support_gradient.iter().map(|(_, g)| g.abs()))
        .fold(0.0, f64::max);
    let ratio_report = BoundReport::new("dpo_pair_ratio", max_ratio_error, DPO_RATIO_TOLERANCE)
        .with("max_off_support_gradient", max_off_support_gradient);
    Ok(DpoPopulationReport { policy: TabularPolicy::new(rows)?, contexts, max_ratio_error, max_off_support_gradient, ratio_report })
}

/// Population loss at one context for tabular logits, in `v = ℓ − log π0` form.
fn pair_terms(b: &[f64], r: &[f64], a: usize, c: usize) -> (f64, f64) {
    (b[a] * b[c], sigmoid(r[a] - r[c]))
}

/// Minimizes the covered-block loss in `v`, pinning `v[0] = 0`.
fn newton_covered(covered: &[usize], b: &[f64], r: &[f64], eta: f64) -> Result<(Vec<f64>, usize)> {
    let n = covered.len();
    let mut v = vec![0.0; n];
    if n <= 1 {
        return Ok((v, 0));
    }
    let loss = |v: &[f64]| -> f64 {
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let (w, p) = pair_terms(b, r, covered[i], covered[j]);
                    let u = eta * (v[i] - v[j]);
                    total -= w * (p * crate::env::log_sigmoid(u) + (1.0 - p) * crate::env::log_sigmoid(-u));
                }
            }
        }
        total
    };
    for iteration in 1..=200 {
        let mut g = Vector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let (w, p) = pair_terms(b, r, covered[i], covered[j]);
                    let u = eta * (v[i] - v[j]);
                    let s = sigmoid(u);
                    let d1 = w * eta * (s - p);
                    let d2 = w * eta * eta * s * (1.0 - s);
                    g[i] += d1;
                    g[j] -= d1;
                    h[(i, i)] += d2;
                    h[(j, j)] += d2;
                    h[(i, j)] -= d2;
                    h[(j, i)] -= d2;
                }
            }
        }
        let g_free = g.rows(1, n - 1).into_owned();
        if g_free.amax() < 1e-14 {
            return Ok((v, iteration - 1));
        }
        let h_free = h.view((1, 1), (n - 1, n - 1)).into_owned();
        let step = Cholesky::new(h_free)
            .ok_or_else(|| Error::Numeric("population DPO Hessian is singular".into()))?
            .solve(&g_free);
        let base = loss(&v);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> =
                std::iter::once(0.0).chain((1..n).map(|i| v[i] - t * step[i - 1])).collect();
            if loss(&cand) <= base + 1e-15 * base.abs() || t < 1e-10 {
                v = cand;
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::NonConvergence("population DPO Newton iterations exhausted".into()))
}

/// Gradient of the population loss with respect to every logit `ℓ_a` of `row`.
///
/// The margin depends on logits only through `ℓ_a − ℓ_c`, and every term
/// involving `a` carries the factor `b[a]`.
fn population_gradient(row: &[f64], pi0: &[f64], b: &[f64], r: &[f64], eta: f64) -> Vec<f64> {
    let k = row.len();
    let logit = |a: usize| row[a].ln() - pi0[a].ln();
    let mut g = vec![0.0; k];
    for a in 0..k {
        for c in 0..k {
            if a != c {
                let (w, p) = pair_terms(b, r, a, c);
                if w == 0.0 {
                    continue;
                }
                let u = eta * (logit(a) - logit(c));
                let d1 = w * eta * (sigmoid(u) - p);
                g[a] += d1;
                g[c] -= d1;
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_instance, sample_unit_vector, InstanceSpec, Origin};
    use approx::assert_abs_diff_eq;

    fn random_policy<R: Rng>(inst: &BanditInstance, rng: &mut R) -> TabularPolicy {
        TabularPolicy::new(
            (0..inst.num_contexts())
                .map(|x| crate::env::softmax(&(0..inst.num_actions(x)).map(|_| 3.0 * rng.random::<f64>()).collect::<Vec<_>>()))
                .collect(),
        )
        .unwrap()
    }

    fn random_table<R: Rng>(inst: &BanditInstance, rng: &mut R) -> RewardTable {
        RewardTable::new(
            (0..inst.num_contexts())
                .map(|x| (0..inst.num_actions(x)).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect())
                .collect(),
        )
    }

    #[test]
    fn decomposition_examples() {
        let mut rng = substream(61, &[]);
        let inst = generate_instance(&InstanceSpec::new(3, 4, 5, 1.0, 0.7), &mut rng).unwrap();
        let pi = random_policy(&inst, &mut rng);
        let same = value_decomposition_check(&pi, &pi, &random_table(&inst, &mut rng), &inst).unwrap();
        assert_eq!(same.metadata["left"], 0.0);
        assert!(same.metadata["right"].abs() < 1e-15);
        let other = random_policy(&inst, &mut rng);
        let exact = value_decomposition_check(&pi, &other, &inst.true_rewards(), &inst).unwrap();
        assert!(exact.lhs <= IDENTITY_TOLERANCE);
        for _ in 0..50 {
            let rep = value_decomposition_check(
                &random_policy(&inst, &mut rng),
                &random_policy(&inst, &mut rng),
                &random_table(&inst, &mut rng),
                &inst,
            )
            .unwrap();
            assert!(rep.lhs <= IDENTITY_TOLERANCE && rep.satisfied);
        }
    }

    #[test]
    fn optimization_error_examples() {
        let mut rng = substream(62, &[]);
        let inst = generate_instance(&InstanceSpec::new(3, 4, 5, 1.0, 0.7), &mut rng).unwrap();
        let r = random_table(&inst, &mut rng);
        let hat = gibbs_oracle(&r, inst.pi0(), 0.7).unwrap();
        let rep = opt_error_identity_check(&hat, &r, &inst).unwrap();
        assert!(rep.metadata["left"].abs() < 1e-14 && rep.metadata["right"].abs() < 1e-14);

        let pi = random_policy(&inst, &mut rng);
        let base = opt_error_identity_check(&pi, &r, &inst).unwrap();
        let scaled = opt_error_identity_check(&pi, &r.scaled(3.0), &inst.with_eta(2.1).unwrap()).unwrap();
        assert_abs_diff_eq!(scaled.metadata["left"], 3.0 * base.metadata["left"], epsilon = 1e-12);
        assert_abs_diff_eq!(scaled.metadata["right"], 3.0 * base.metadata["right"], epsilon = 1e-12);
        assert!(base.lhs <= IDENTITY_TOLERANCE);
    }

    #[test]
    fn elliptical_examples() {
        let (count, _, _) = elliptical_potential_count(&[], 1.0, 0.5).unwrap();
        assert_eq!(count, 0);
        let e1 = Vector::from_vec(vec![1.0, 0.0]);
        let (count, _, _) = elliptical_potential_count(&vec![e1; 20], 1.0, 0.5).unwrap();
        assert_eq!(count, 3);
        let big = Vector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(elliptical_potential_count(&[big], 1.0, 0.5), Err(Error::Input(_))));

        let mut rng = substream(63, &[]);
        let seq: Vec<Vector> = (0..10_000).map(|_| sample_unit_vector(8, &mut rng)).collect();
        let (count, bound, rep) = elliptical_potential_count(&seq, 1.0, 1.0).unwrap();
        assert!(count as f64 <= bound && rep.satisfied);
    }

    #[test]
    fn offline_certificate_matches_hand_computed_bonuses() {
        // Σ = I + (1,−1)(1,−1)ᵀ, so Σ⁻¹ = [[2,1],[1,2]]/3.
        let inst = BanditInstance::new(
            vec![1.0],
            vec![vec![Vector::from_vec(vec![1.0, 0.0]), Vector::from_vec(vec![0.0, 1.0])]],
            Vector::from_vec(vec![0.5, 0.0]),
            1.0,
            1.0,
            TabularPolicy::uniform(&[2]),
        )
        .unwrap();
        let data = [PreferenceTuple::new(0, 0, 1, 1, Origin::Offline).unwrap()];
        let p = sigmoid(0.5);
        for option in [GshfOption::I, GshfOption::II] {
            let mut cfg = GshfConfig::new(1.0);
            cfg.option = option;
            let (pi_hat, diag) = crate::algorithms::offline_gshf(&data, &inst, &cfg).unwrap();
            let rep = offline_certificate(&pi_hat, &data, &inst, &diag).unwrap();
            let expected = match option {
                GshfOption::I => (2.0 * (p * p + p * (1.0 - p) + (1.0 - p) * (1.0 - p)) / 3.0).sqrt(),
                GshfOption::II => (2.0f64 / 3.0).sqrt(),
            };
            assert_abs_diff_eq!(rep.metadata["bonus"], expected, epsilon = 1e-12);
            assert_abs_diff_eq!(rep.rhs, 2.0 * diag.beta * expected, epsilon = 1e-9);
            assert_abs_diff_eq!(rep.lhs, inst.suboptimality(&pi_hat).unwrap(), epsilon = 0.0);
            assert!(rep.satisfied);
            if option == GshfOption::II {
                assert!(rep.metadata["tight_rhs"] <= rep.rhs);
            }
        }
    }

    #[test]
    fn coverage_coefficient_examples() {
        let inst = BanditInstance::new(
            vec![1.0],
            vec![vec![Vector::from_vec(vec![1.0, 0.0]), Vector::from_vec(vec![0.0, 0.0])]],
            Vector::from_vec(vec![0.5, 0.0]),
            1.0,
            1.0,
            TabularPolicy::uniform(&[2]),
        )
        .unwrap();
        let a = TabularPolicy::new(vec![vec![1.0, 0.0]]).unwrap();
        let b = TabularPolicy::new(vec![vec![0.0, 1.0]]).unwrap();
        let (c, _) = coverage_coefficient(&[], &a, &b, &inst, 0.3, 1, 1.0).unwrap();
        assert_abs_diff_eq!(c, 1.0, epsilon = 1e-15);
        let (zero, _) = coverage_coefficient(&[], &a, &a, &inst, 0.3, 100, 1.0).unwrap();
        assert_eq!(zero, 0.0);

        let mut rng = substream(64, &[]);
        let inst = generate_instance(&InstanceSpec::new(4, 3, 5, 1.0, 1.0), &mut rng).unwrap();
        let star = inst.optimal_policy();
        let mut data = Vec::new();
        let mut last = f64::INFINITY;
        for _ in 0..30 {
            let x = inst.sample_context(&mut rng);
            let a1 = rng.random_range(0..5);
            let a2 = (a1 + rng.random_range(1..5)) % 5;
            data.push(PreferenceTuple::new(x, a1, a2, 1, Origin::Offline).unwrap());
            let (c, _) = coverage_coefficient(&data, &star, inst.pi0(), &inst, 0.5, 64, 1.0).unwrap();
            assert!(c <= last * (1.0 + 1e-12));
            last = c;
        }
    }

    #[test]
    fn dpo_population_examples() {
        let mut rng = substream(65, &[]);
        let inst = generate_instance(&InstanceSpec::new(3, 3, 5, 2.0, 0.8), &mut rng).unwrap();
        let full = random_policy(&inst, &mut rng);
        let rep = dpo_population_check(&full, &inst).unwrap();
        assert!(rep.max_ratio_error < DPO_RATIO_TOLERANCE, "{}", rep.max_ratio_error);
        assert!(rep.policy.max_total_variation(&inst.optimal_policy()) < 1e-6);

        let deficient = TabularPolicy::new(vec![vec![0.3, 0.0, 0.2, 0.4, 0.1]; 3]).unwrap();
        let rep = dpo_population_check(&deficient, &inst).unwrap();
        assert_eq!(rep.max_off_support_gradient, 0.0);
        assert!(rep.contexts.iter().all(|c| c.off_support_gradient.len() == 1));
        assert!(rep.max_ratio_error < DPO_RATIO_TOLERANCE);

        let flat = inst.with_theta_star(Vector::zeros(3)).unwrap();
        let rep = dpo_population_check(&TabularPolicy::uniform_for(&flat), &flat).unwrap();
        assert!(rep.policy.max_total_variation(flat.pi0()) < 1e-6);
    }

    #[test]
    fn confidence_coverage_limits() {
        let mut rng = substream(66, &[]);
        let inst = generate_instance(&InstanceSpec::new(2, 3, 4, 1.0, 0.5), &mut rng).unwrap();
        let mut cfg = GshfConfig::new(0.5);
        cfg.batch_size = 16;
        cfg.iterations = 3;
        cfg.beta_constant = 1e9;
        let wide = confidence_coverage_mc(&inst, &cfg, 2, &mut rng).unwrap();
        assert_eq!(wide.fraction, 1.0);
        cfg.beta_constant = 0.0;
        let narrow = confidence_coverage_mc(&inst, &cfg, 2, &mut rng).unwrap();
        // the first main agent is π0, strictly away from π*
        assert!(narrow.reports.iter().filter(|r| r.metadata["t"] == 1.0).all(|r| !r.satisfied));
        assert!(narrow.fraction < 1.0);
    }
}
