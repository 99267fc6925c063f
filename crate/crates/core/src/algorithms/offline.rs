use serde::{Deserialize, Serialize};

use super::{gibbs_of_theta, GshfConfig, GshfOption};
use crate::env::{log_sum_exp, sample_ball, BanditInstance, PreferenceTuple, RewardTable, Vector};
use crate::error::{Error, Result};
use crate::policy::{expected_kl, gibbs_oracle, TabularPolicy};
use crate::reward::{covariance, fit_mle, CovMatrix, MleReport};
use crate::rng::substream;
use crate::solver::{minimize_on_ball_certified, PgOptions};

const RESTART_STREAM: u64 = 0x0F1;
const RANDOM_RESTARTS: usize = 4;
/// Bonus values below this count as sitting on the kink `E φ(π) = ν`.
const KINK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfflineDiagnostics {
    pub option: GshfOption,
    pub mle: MleReport,
    pub beta: f64,
    pub lambda: f64,
    pub nu: Vec<f64>,
    /// Option II: `Γ(x,a,ν)` for every pair (without the β factor).
    pub bonus: Option<Vec<Vec<f64>>>,
    /// Option I: the achieved objective and its bonus term `‖E φ(π̂) − ν‖_{Σ⁻¹}`.
    pub objective: Option<f64>,
    pub expected_bonus: Option<f64>,
    /// Option I: the Gibbs parameter of the returned policy.
    pub policy_theta: Option<Vec<f64>>,
    /// Option I: best objective reached from each restart.
    pub restart_objectives: Vec<f64>,
    pub converged: bool,
}

/// Offline GSHF. Returns the learned policy and the quantities it was built from.
pub fn offline_gshf(
    data: &[PreferenceTuple],
    instance: &BanditInstance,
    config: &GshfConfig,
) -> Result<(TabularPolicy, OfflineDiagnostics)> {
    config.validate()?;
    let mle = fit_mle(data, instance, &config.mle)?;
    if !mle.converged {
        return Err(Error::NonConvergence(format!(
            "MLE stopped after {} iterations with gradient norm {:.3e}",
            mle.iterations, mle.gradient_norm
        )));
    }
    let cov = covariance(data, instance, config.lambda, None)?;
    let beta = config.offline_beta(instance)?;
    let nu = config.resolve_nu(instance)?;
    let theta = mle.theta_hat.theta();
    let mut diag = OfflineDiagnostics {
        option: config.option,
        mle,
        beta,
        lambda: config.lambda,
        nu: nu.as_slice().to_vec(),
        bonus: None,
        objective: None,
        expected_bonus: None,
        policy_theta: None,
        restart_objectives: Vec::new(),
        converged: true,
    };
    match config.option {
        GshfOption::II => {
            let bonus = bonus_table(instance, &nu, &cov)?;
            let r_hat = RewardTable::linear(instance, &theta).map(|x, a, r| r - beta * bonus.get(x, a));
            let pi = gibbs_oracle(&r_hat, instance.pi0(), config.eta)?;
            diag.bonus = Some(bonus.rows().to_vec());
            Ok((pi, diag))
        }
        GshfOption::I => {
            let problem = OptionOne { instance, theta_mle: &theta, nu: &nu, cov: &cov, beta, eta: config.eta };
            let mut rng = substream(config.seed, &[RESTART_STREAM]);
            let mut starts = vec![theta.clone(), Vector::zeros(instance.dim())];
            starts.extend((0..RANDOM_RESTARTS).map(|_| sample_ball(instance.dim(), instance.bound(), &mut rng)));
            let mut best: Option<(f64, Vector, bool)> = None;
            for start in &starts {
                let out = minimize_on_ball_certified(
                    |th| {
                        let (f, g, _) = problem.eval(th);
                        (-f, -g)
                    },
                    start,
                    instance.bound(),
                    PgOptions { tolerance: config.mle.tolerance, max_iterations: config.mle.max_iterations },
                    |th| problem.stationary_at_kink(th),
                );
                let value = -out.value;
                diag.restart_objectives.push(value);
                if best.as_ref().is_none_or(|b| value > b.0) {
                    best = Some((value, out.x, out.converged));
                }
            }
            let (value, th, converged) = best.expect("at least one restart");
            let (_, _, bonus) = problem.eval(&th);
            diag.objective = Some(value);
            diag.expected_bonus = Some(bonus);
            diag.policy_theta = Some(th.as_slice().to_vec());
            diag.converged = converged;
            Ok((gibbs_of_theta(instance, &th, config.eta)?, diag))
        }
    }
}

/// `Γ(x,a,ν) = ‖φ(x,a) − ν‖_{Σ⁻¹}` for every pair.
pub(crate) fn bonus_table(instance: &BanditInstance, nu: &Vector, cov: &CovMatrix) -> Result<RewardTable> {
    let rows = instance
        .features()
        .iter()
        .map(|row| row.iter().map(|f| cov.inv_norm(&(f - nu))).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(RewardTable::new(rows))
}

/// `E_{d0}[E_π r_MLE] − β·‖E φ(π) − ν‖_{Σ⁻¹} − η·E_{d0} KL(π‖π0)` for any policy.
#[allow(clippy::too_many_arguments)]
pub fn option_one_objective(
    instance: &BanditInstance,
    pi: &TabularPolicy,
    theta_mle: &Vector,
    nu: &Vector,
    cov: &CovMatrix,
    beta: f64,
    eta: f64,
) -> Result<f64> {
    instance.check_shape(pi)?;
    let reward = instance.expected_feature(pi).dot(theta_mle);
    let bonus = cov.inv_norm(&(instance.expected_feature(pi) - nu))?;
    let kl = expected_kl(pi, instance.pi0(), instance.d0())?;
    Ok(reward - beta * bonus - eta * kl)
}

struct OptionOne<'a> {
    instance: &'a BanditInstance,
    theta_mle: &'a Vector,
    nu: &'a Vector,
    cov: &'a CovMatrix,
    beta: f64,
    eta: f64,
}

impl OptionOne<'_> {
    /// Objective, its gradient in θ, and the bonus term, for `π = Gibbs(⟨θ,φ⟩)`.
    ///
    /// With `H = E_x Cov_π(φ)/η = ∂u/∂θ` the reward-minus-KL part has gradient
    /// `H(θ_MLE − θ)`; the norm contributes `−β·H·Σ⁻¹(u−ν)/‖u−ν‖`.
    fn eval(&self, theta: &Vector) -> (f64, Vector, f64) {
        let (u, h, kl) = self.moments(theta);
        let gap = &u - self.nu;
        let bonus = self.cov.inv_quad(&gap).unwrap_or(0.0).sqrt();
        let value = u.dot(self.theta_mle) - self.eta * kl - self.beta * bonus;
        let mut grad = &h * (self.theta_mle - theta);
        if bonus > 0.0 && self.beta > 0.0 {
            grad -= &h * self.cov.solve(&gap) * (self.beta / bonus);
        }
        (value, grad, bonus)
    }

    /// Subgradient test where `E φ(π) = ν` and the bonus is not differentiable.
    /// The bonus's subdifferential in `u` there is `{w : ‖w‖_Σ ≤ 1}`, so with
    /// `H` invertible and `θ` interior, `0` is a supergradient iff
    /// `‖θ_MLE − θ‖_Σ ≤ β`.
    fn stationary_at_kink(&self, theta: &Vector) -> bool {
        if self.beta <= 0.0 || theta.norm() >= self.instance.bound() * (1.0 - 1e-9) {
            return false;
        }
        let (u, h, _) = self.moments(theta);
        let bonus = self.cov.inv_quad(&(&u - self.nu)).unwrap_or(f64::INFINITY).sqrt();
        if bonus > KINK_TOLERANCE {
            return false;
        }
        let eig = nalgebra::SymmetricEigen::new(h).eigenvalues;
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &l| (a.min(l), b.max(l)));
        lo > 1e-12 * hi && self.cov.norm(&(self.theta_mle - theta)).is_ok_and(|n| n <= self.beta)
    }

    /// `(E_{d0} φ(π), H, E_{d0} KL(π‖π0))` for `π = Gibbs(⟨θ,φ⟩)`.
    fn moments(&self, theta: &Vector) -> (Vector, nalgebra::DMatrix<f64>, f64) {
        let d = theta.len();
        let mut u = Vector::zeros(d);
        let mut h = nalgebra::DMatrix::zeros(d, d);
        let mut kl = 0.0;
        for (x, w) in self.instance.d0().iter().enumerate() {
            let feats = &self.instance.features()[x];
            let pi0 = self.instance.pi0().row(x);
            let logits: Vec<f64> = feats.iter().zip(pi0).map(|(f, p)| p.ln() + f.dot(theta) / self.eta).collect();
            let log_z = log_sum_exp(&logits);
            let mut ux = Vector::zeros(d);
            let mut second = nalgebra::DMatrix::zeros(d, d);
            for (f, l) in feats.iter().zip(&logits) {
                let p = (l - log_z).exp();
                ux.axpy(p, f, 1.0);
                second.ger(p, f, f, 1.0);
            }
            second.ger(-1.0, &ux, &ux, 1.0);
            kl += w * (ux.dot(theta) / self.eta - log_z);
            u.axpy(*w, &ux, 1.0);
            h += second * (*w / self.eta);
        }
        (u, h, kl)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::NuChoice;
    use crate::env::{generate_instance, InstanceSpec, Origin};
    use crate::rng::substream;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random_data<R: Rng>(inst: &BanditInstance, n: usize, rng: &mut R) -> Vec<PreferenceTuple> {
        (0..n)
            .map(|_| {
                let x = inst.sample_context(rng);
                let k = inst.num_actions(x);
                let a1 = rng.random_range(0..k);
                let a2 = (a1 + rng.random_range(1..k)) % k;
                let y = inst.sample_preference(x, a1, a2, rng).unwrap();
                PreferenceTuple::new(x, a1, a2, y, Origin::Offline).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_beta_is_plain_gibbs_of_the_mle() {
        let mut rng = substream(31, &[]);
        let inst = generate_instance(&InstanceSpec::new(3, 4, 5, 1.0, 0.5), &mut rng).unwrap();
        let data = random_data(&inst, 200, &mut rng);
        let mut cfg = GshfConfig::new(0.5);
        cfg.beta_constant = 0.0;
        let (pi, diag) = offline_gshf(&data, &inst, &cfg).unwrap();
        let direct = gibbs_of_theta(&inst, &diag.mle.theta_hat.theta(), 0.5).unwrap();
        assert!(pi.max_total_variation(&direct) < 1e-14);
    }

    #[test]
    fn covered_action_is_not_penalized() {
        let f0 = Vector::from_vec(vec![0.6, 0.0]);
        let f1 = Vector::from_vec(vec![0.0, 0.6]);
        let inst = BanditInstance::new(
            vec![1.0],
            vec![vec![f0.clone(), f1.clone()]],
            Vector::from_vec(vec![0.5, 0.2]),
            1.0,
            1.0,
            TabularPolicy::uniform(&[2]),
        )
        .unwrap();
        let data = vec![
            PreferenceTuple::new(0, 0, 1, 1, Origin::Offline).unwrap(),
            PreferenceTuple::new(0, 0, 1, 0, Origin::Offline).unwrap(),
            PreferenceTuple::new(0, 0, 1, 1, Origin::Offline).unwrap(),
        ];
        let mut cfg = GshfConfig::new(1.0);
        cfg.nu = NuChoice::Explicit(vec![0.6, 0.0]);
        let (pi, diag) = offline_gshf(&data, &inst, &cfg).unwrap();
        let bonus = diag.bonus.unwrap();
        assert_eq!(bonus[0][0], 0.0);

        // brute force: Σ = λI + 3·z zᵀ with z = φ0 − φ1
        let z = &f0 - &f1;
        let sigma = nalgebra::DMatrix::identity(2, 2) + &z * z.transpose() * 3.0;
        let inv = sigma.try_inverse().unwrap();
        let diff = &f1 - &f0;
        let gamma1 = (diff.transpose() * &inv * &diff)[(0, 0)].sqrt();
        assert_abs_diff_eq!(bonus[0][1], gamma1, epsilon = 1e-12);
        let th = diag.mle.theta_hat.theta();
        let r0 = th.dot(&f0);
        let r1 = th.dot(&f1) - diag.beta * gamma1;
        let p0 = 1.0 / (1.0 + (r1 - r0).exp());
        assert_abs_diff_eq!(pi.prob(0, 0), p0, epsilon = 1e-12);
    }

    #[test]
    fn option_two_rewards_are_pessimistic() {
        let mut rng = substream(32, &[]);
        let inst = generate_instance(&InstanceSpec::new(4, 5, 6, 2.0, 1.0), &mut rng).unwrap();
        let data = random_data(&inst, 150, &mut rng);
        let (_, diag) = offline_gshf(&data, &inst, &GshfConfig::new(1.0)).unwrap();
        for row in diag.bonus.unwrap() {
            assert!(row.iter().all(|&g| g >= 0.0));
        }
    }

    #[test]
    fn option_one_improves_on_the_reference() {
        let mut rng = substream(33, &[]);
        for _ in 0..5 {
            let inst = generate_instance(&InstanceSpec::new(3, 4, 5, 1.5, 0.5), &mut rng).unwrap();
            let data = random_data(&inst, 100, &mut rng);
            let mut cfg = GshfConfig::new(0.5);
            cfg.option = GshfOption::I;
            cfg.nu = NuChoice::ReferenceMean;
            let (pi, diag) = offline_gshf(&data, &inst, &cfg).unwrap();
            let cov = covariance(&data, &inst, cfg.lambda, None).unwrap();
            let nu = Vector::from_column_slice(&diag.nu);
            let th = diag.mle.theta_hat.theta();
            let at = |p: &TabularPolicy| option_one_objective(&inst, p, &th, &nu, &cov, diag.beta, 0.5).unwrap();
            assert_abs_diff_eq!(at(&pi), diag.objective.unwrap(), epsilon = 1e-10);
            assert!(at(&pi) >= at(inst.pi0()) - 1e-8);
            // no restart may beat the reported optimum
            assert!(diag.restart_objectives.iter().all(|&v| v <= diag.objective.unwrap()));
        }
    }

    #[test]
    fn option_one_gradient_matches_finite_differences() {
        let mut rng = substream(34, &[]);
        let inst = generate_instance(&InstanceSpec::new(3, 3, 4, 2.0, 0.7), &mut rng).unwrap();
        let data = random_data(&inst, 40, &mut rng);
        let cov = covariance(&data, &inst, 0.5, None).unwrap();
        let th_mle = sample_ball(3, 2.0, &mut rng);
        let nu = Vector::from_vec(vec![0.05, -0.1, 0.2]);
        let problem = OptionOne { instance: &inst, theta_mle: &th_mle, nu: &nu, cov: &cov, beta: 0.8, eta: 0.7 };
        for _ in 0..10 {
            let th = sample_ball(3, 1.5, &mut rng);
            let (_, g, _) = problem.eval(&th);
            for j in 0..3 {
                let mut e = Vector::zeros(3);
                e[j] = 1e-6;
                let fd = (problem.eval(&(&th + &e)).0 - problem.eval(&(&th - &e)).0) / 2e-6;
                assert_abs_diff_eq!(g[j], fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn option_one_certifies_an_optimum_on_the_kink() {
        // Comparing only actions 0 and 1 leaves a large bonus elsewhere, so
        // the optimum pulls E φ(π) onto ν where the norm is not differentiable.
        let mut rng = substream(35, &[]);
        let inst = generate_instance(&InstanceSpec::new(4, 8, 6, 2.0, 1.0), &mut rng).unwrap();
        let data: Vec<_> = (0..100)
            .map(|_| {
                let x = inst.sample_context(&mut rng);
                let y = inst.sample_preference(x, 0, 1, &mut rng).unwrap();
                PreferenceTuple::new(x, 0, 1, y, Origin::Offline).unwrap()
            })
            .collect();
        let mut cfg = GshfConfig::new(1.0);
        cfg.option = GshfOption::I;
        let (_, diag) = offline_gshf(&data, &inst, &cfg).unwrap();
        assert!(diag.converged);
        assert!(diag.expected_bonus.unwrap() < 1e-12);
        let best = diag.objective.unwrap();
        assert!(diag.restart_objectives.iter().all(|v| (best - v).abs() < 1e-9), "{:?}", diag.restart_objectives);
    }
}
