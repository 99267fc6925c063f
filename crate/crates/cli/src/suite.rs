//! The exact identity suite behind `gshf check`: value decomposition,
//! optimization-error identity, Gibbs optimality and elliptical-potential counts.

use gshf_core::analysis::{
    elliptical_potential_count, opt_error_identity_check, value_decomposition_check, IDENTITY_TOLERANCE,
};
use gshf_core::env::{sample_unit_vector, RewardTable};
use gshf_core::rng::substream;
use gshf_core::{generate_instance, gibbs_oracle, kl_divergence, BoundReport, InstanceSpec, TabularPolicy, Vector};
use rand::Rng;
use serde::Serialize;

use crate::error::CliResult;

#[derive(Debug, Clone, Serialize)]
pub struct CheckSummary {
    pub name: String,
    pub passed: usize,
    pub total: usize,
    /// Largest `lhs − rhs` seen; non-positive when everything passed.
    pub worst_margin: f64,
}

impl CheckSummary {
    fn from_reports(name: &str, reports: &[BoundReport]) -> Self {
        Self {
            name: name.into(),
            passed: reports.iter().filter(|r| r.satisfied).count(),
            total: reports.len(),
            worst_margin: reports.iter().map(|r| r.lhs - r.rhs).fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn ok(&self) -> bool {
        self.total > 0 && self.passed == self.total
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteSize {
    pub identity_trials: usize,
    pub gibbs_trials: usize,
    pub perturbations: usize,
    pub elliptical_sequences: usize,
}

impl Default for SuiteSize {
    fn default() -> Self {
        Self { identity_trials: 1000, gibbs_trials: 1000, perturbations: 100, elliptical_sequences: 100 }
    }
}

/// Full-support policy with log-normal weights, so rows range from nearly
/// uniform to nearly deterministic.
pub fn random_policy<R: Rng + ?Sized>(actions: &[usize], spread: f64, rng: &mut R) -> TabularPolicy {
    let rows = actions
        .iter()
        .map(|&k| {
            let logits: Vec<f64> = (0..k).map(|_| spread * (2.0 * rng.random::<f64>() - 1.0)).collect();
            gshf_core::env::softmax(&logits)
        })
        .collect();
    TabularPolicy::new(rows).expect("softmax rows are distributions")
}

fn random_table<R: Rng + ?Sized>(actions: &[usize], scale: f64, rng: &mut R) -> RewardTable {
    RewardTable::new(actions.iter().map(|&k| (0..k).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect()).collect())
}

/// Per-context objective `E_π r − η·KL(π‖π0)`.
fn regularized(pi: &TabularPolicy, pi0: &TabularPolicy, r: &RewardTable, eta: f64, x: usize) -> f64 {
    pi.row(x).iter().zip(r.row(x)).map(|(p, v)| p * v).sum::<f64>() - eta * kl_divergence(pi, pi0, x).expect("shared support")
}

pub fn run_identity_suite(seed: u64, size: SuiteSize) -> CliResult<(Vec<CheckSummary>, Vec<BoundReport>)> {
    let mut decomposition = Vec::with_capacity(size.identity_trials);
    let mut opt_error = Vec::with_capacity(size.identity_trials);
    for trial in 0..size.identity_trials {
        let mut rng = substream(seed, &[1, trial as u64]);
        let spec = InstanceSpec::new(
            rng.random_range(1..=6),
            rng.random_range(1..=5),
            rng.random_range(2..=7),
            rng.random_range(0.5..3.0),
            rng.random_range(0.05..3.0),
        );
        let inst = generate_instance(&spec, &mut rng)?;
        let shape: Vec<usize> = (0..inst.num_contexts()).map(|x| inst.num_actions(x)).collect();
        let pi = random_policy(&shape, 4.0, &mut rng);
        let pi_hat = random_policy(&shape, 4.0, &mut rng);
        let r_hat = random_table(&shape, 3.0, &mut rng);
        decomposition.push(value_decomposition_check(&pi, &pi_hat, &r_hat, &inst)?.with("trial", trial as f64));
        opt_error.push(opt_error_identity_check(&pi, &r_hat, &inst)?.with("trial", trial as f64));
    }

    // One report per trial: the best perturbation's objective against the oracle's.
    let mut gibbs = Vec::with_capacity(size.gibbs_trials);
    for trial in 0..size.gibbs_trials {
        let mut rng = substream(seed, &[2, trial as u64]);
        let shape: Vec<usize> = (0..rng.random_range(1..=4)).map(|_| rng.random_range(2..=8)).collect();
        let pi0 = random_policy(&shape, 3.0, &mut rng);
        let r = random_table(&shape, 3.0, &mut rng);
        let eta = rng.random_range(0.05..3.0);
        let star = gibbs_oracle(&r, &pi0, eta)?;
        let mut best_gap = f64::NEG_INFINITY;
        for _ in 0..size.perturbations {
            let eps = 10f64.powf(rng.random_range(-4.0..0.0));
            let noise = random_policy(&shape, 3.0, &mut rng);
            let rows = (0..shape.len())
                .map(|x| star.row(x).iter().zip(noise.row(x)).map(|(s, n)| (1.0 - eps) * s + eps * n).collect())
                .collect();
            let other = TabularPolicy::new(rows)?;
            for x in 0..shape.len() {
                let gap = regularized(&other, &pi0, &r, eta, x) - regularized(&star, &pi0, &r, eta, x);
                best_gap = best_gap.max(gap);
            }
        }
        gibbs.push(BoundReport::new("gibbs_optimality", best_gap, IDENTITY_TOLERANCE).with("trial", trial as f64));
    }

    let mut elliptical = Vec::new();
    for (k, &d) in [2usize, 8, 32].iter().enumerate() {
        for s in 0..size.elliptical_sequences {
            let mut rng = substream(seed, &[3, k as u64, s as u64]);
            let lambda = 10f64.powf(rng.random_range(-2.0..1.0));
            let c = rng.random_range(0.05..2.0);
            let len = rng.random_range(50..400);
            let diffs: Vec<Vector> = match s % 3 {
                0 => (0..len).map(|_| sample_unit_vector(d, &mut rng) * rng.random_range(0.0..1.0)).collect(),
                1 => {
                    let few: Vec<Vector> = (0..3).map(|_| sample_unit_vector(d, &mut rng)).collect();
                    (0..len).map(|i| few[i % 3].clone()).collect()
                }
                _ => (0..len).map(|i| Vector::from_fn(d, |j, _| f64::from(j == i % d))).collect(),
            };
            let (_, _, report) = elliptical_potential_count(&diffs, lambda, c)?;
            elliptical.push(report.with("dim", d as f64).with("sequence", s as f64));
        }
    }

    let summaries = vec![
        CheckSummary::from_reports("value_decomposition", &decomposition),
        CheckSummary::from_reports("policy_optimization_error", &opt_error),
        CheckSummary::from_reports("gibbs_optimality", &gibbs),
        CheckSummary::from_reports("elliptical_potential", &elliptical),
    ];
    let mut reports = decomposition;
    reports.extend(opt_error);
    reports.extend(gibbs);
    reports.extend(elliptical);
    Ok((summaries, reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let size = SuiteSize { identity_trials: 20, gibbs_trials: 20, perturbations: 10, elliptical_sequences: 3 };
        let (summaries, reports) = run_identity_suite(5, size).unwrap();
        assert!(summaries.iter().all(CheckSummary::ok), "{summaries:?}");
        assert_eq!(reports.len(), 20 + 20 + 20 + 9);
    }
}
