//! Bradley-Terry likelihood, constrained maximum-likelihood fitting,
//! pairwise-difference covariance matrices and the uncertainty bonuses
//! built on them.

use std::borrow::Borrow;
use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::env::{log_sigmoid, sigmoid, BanditInstance, PreferenceTuple, Vector};
use crate::error::{Error, Result};
use crate::policy::TabularPolicy;
use crate::solver::{minimize_on_ball, PgOptions};

/// `γ = 1/(2 + e^{−B} + e^{B})`, a lower bound on `σ'` over `[−2B, 2B]`-ish margins.
pub fn link_gamma(bound: f64) -> f64 {
    1.0 / (2.0 + (-bound).exp() + bound.exp())
}

/// A linear reward parameter constrained to the radius-`B` ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    theta: Vec<f64>,
    bound: f64,
}

impl RewardParams {
    pub fn new(theta: Vector, bound: f64) -> Result<Self> {
        if !(bound > 0.0) {
            return Err(Error::Parameter(format!("bound must be positive, got {bound}")));
        }
        if theta.norm() > bound + 1e-9 {
            return Err(Error::Input(format!("‖θ‖ = {} exceeds B = {bound}", theta.norm())));
        }
        Ok(Self { theta: theta.as_slice().to_vec(), bound })
    }

    pub fn zeros(dim: usize, bound: f64) -> Self {
        Self { theta: vec![0.0; dim], bound }
    }

    pub fn theta(&self) -> Vector {
        Vector::from_column_slice(&self.theta)
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn gamma(&self) -> f64 {
        link_gamma(self.bound)
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

/// A regularized pairwise-difference covariance matrix and its Cholesky factor.
///
/// Plain form: `λI + Σ z zᵀ`. Batch-normalized form: `λI + (1/m) Σ z zᵀ`.
#[derive(Debug, Clone)]
pub struct CovMatrix {
    matrix: DMatrix<f64>,
    lambda: f64,
    batch_size: Option<usize>,
    factor: Cholesky<f64, Dyn>,
}

impl CovMatrix {
    pub fn identity(dim: usize, lambda: f64) -> Result<Self> {
        Self::from_differences(std::iter::empty::<Vector>(), dim, lambda, None)
    }

    pub fn from_differences<I>(diffs: I, dim: usize, lambda: f64, batch_size: Option<usize>) -> Result<Self>
    where
        I: IntoIterator,
        I::Item: Borrow<Vector>,
    {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Parameter(format!("λ must be positive, got {lambda}")));
        }
        if batch_size == Some(0) {
            return Err(Error::Parameter("batch size m must be at least 1".into()));
        }
        let scale = batch_size.map_or(1.0, |m| 1.0 / m as f64);
        let mut matrix = DMatrix::identity(dim, dim) * lambda;
        for z in diffs {
            let z = z.borrow();
            if z.len() != dim {
                return Err(Error::Input(format!("difference has dimension {}, expected {dim}", z.len())));
            }
            matrix.ger(scale, z, z, 1.0);
        }
        Self::from_matrix(matrix, lambda, batch_size)
    }

    /// `λI + scale·S` for an accumulated scatter matrix `S = Σ z zᵀ`, where
    /// `scale` is `1/m` in batch-normalized form and 1 otherwise.
    pub fn from_scatter(scatter: &DMatrix<f64>, lambda: f64, batch_size: Option<usize>) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Parameter(format!("λ must be positive, got {lambda}")));
        }
        if batch_size == Some(0) {
            return Err(Error::Parameter("batch size m must be at least 1".into()));
        }
        let scale = batch_size.map_or(1.0, |m| 1.0 / m as f64);
        let n = scatter.nrows();
        Self::from_matrix(DMatrix::identity(n, n) * lambda + scatter * scale, lambda, batch_size)
    }

    fn from_matrix(mut matrix: DMatrix<f64>, lambda: f64, batch_size: Option<usize>) -> Result<Self> {
        // exact symmetry; rank-one updates can drift in the last bit
        let t = matrix.transpose();
        matrix = (matrix + t) * 0.5;
        let factor = Cholesky::new(matrix.clone())
            .ok_or_else(|| Error::Numeric("covariance is not positive definite".into()))?;
        Ok(Self { matrix, lambda, batch_size, factor })
    }

    /// Returns `self + scale·Σ z zᵀ` over the extra differences, keeping λ and m.
    pub fn extended<I>(&self, diffs: I) -> Result<Self>
    where
        I: IntoIterator,
        I::Item: Borrow<Vector>,
    {
        let scale = self.batch_size.map_or(1.0, |m| 1.0 / m as f64);
        let mut matrix = self.matrix.clone();
        for z in diffs {
            let z = z.borrow();
            matrix.ger(scale, z, z, 1.0);
        }
        Self::from_matrix(matrix, self.lambda, self.batch_size)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn batch_size(&self) -> Option<usize> {
        self.batch_size
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `vᵀ Σ⁻¹ v` through the Cholesky solve.
    pub fn inv_quad(&self, v: &Vector) -> Result<f64> {
        if v.len() != self.dim() {
            return Err(Error::Input(format!("vector has dimension {}, expected {}", v.len(), self.dim())));
        }
        let mut w = v.clone();
        self.factor.solve_mut(&mut w);
        Ok(v.dot(&w).max(0.0))
    }

    /// `‖v‖_{Σ⁻¹}`.
    pub fn inv_norm(&self, v: &Vector) -> Result<f64> {
        Ok(self.inv_quad(v)?.sqrt())
    }

    /// `‖v‖_Σ`.
    pub fn norm(&self, v: &Vector) -> Result<f64> {
        if v.len() != self.dim() {
            return Err(Error::Input(format!("vector has dimension {}, expected {}", v.len(), self.dim())));
        }
        Ok(v.dot(&(&self.matrix * v)).max(0.0).sqrt())
    }

    pub fn solve(&self, v: &Vector) -> Vector {
        self.factor.solve(v)
    }

    /// Symmetric inverse square root `Σ^{-1/2}` from the eigendecomposition.
    pub fn inv_sqrt(&self) -> DMatrix<f64> {
        let eig = SymmetricEigen::new(self.matrix.clone());
        let scaled = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.max(f64::MIN_POSITIVE).sqrt()));
        &eig.eigenvectors * scaled * eig.eigenvectors.transpose()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix.clone()).eigenvalues.min()
    }
}

/// `Σ = λI + Σ zzᵀ` (plain) or `λI + (1/m)Σ zzᵀ` (batch-normalized) over the
/// feature differences of `data`.
pub fn covariance(
    data: &[PreferenceTuple],
    instance: &BanditInstance,
    lambda: f64,
    batch_size: Option<usize>,
) -> Result<CovMatrix> {
    let diffs = data.iter().map(|t| instance.feature_diff(t)).collect::<Result<Vec<_>>>()?;
    CovMatrix::from_differences(diffs, instance.dim(), lambda, batch_size)
}

/// `Γ(x,a,ν) = ‖φ(x,a) − ν‖_{Σ⁻¹}`.
pub fn pointwise_bonus(feature: &Vector, nu: &Vector, cov: &CovMatrix) -> Result<f64> {
    cov.inv_norm(&(feature - nu))
}

/// `Γᵉ(π,ν) = ‖E_{x~d0}[φ(x,π)] − ν‖_{Σ⁻¹}`.
pub fn expected_bonus(pi: &TabularPolicy, nu: &Vector, cov: &CovMatrix, instance: &BanditInstance) -> Result<f64> {
    cov.inv_norm(&(instance.expected_feature(pi) - nu))
}

/// In-sample error `‖θ₁ − θ₂‖_Σ`.
pub fn in_sample_error(theta1: &RewardParams, theta2: &RewardParams, cov: &CovMatrix) -> Result<f64> {
    cov.norm(&(theta1.theta() - theta2.theta()))
}

/// Which confidence radius to compute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    /// `c·√((d + log(1/δ))/γ² + λB²)`.
    Offline,
    /// `c·√(d·log(T/δ)/(γ²m))`.
    Online { horizon: usize },
}

/// Confidence radius β. `n_or_m` is the batch size `m` in online mode and is
/// unused offline.
#[allow(clippy::too_many_arguments)]
pub fn beta_schedule(
    dim: usize,
    gamma: f64,
    lambda: f64,
    bound: f64,
    delta: f64,
    n_or_m: usize,
    constant: f64,
    mode: BetaMode,
) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("δ must lie in (0,1), got {delta}")));
    }
    if !(gamma > 0.0) {
        return Err(Error::Parameter(format!("γ must be positive, got {gamma}")));
    }
    let d = dim as f64;
    let inner = match mode {
        BetaMode::Offline => (d + (1.0 / delta).ln()) / (gamma * gamma) + lambda * bound * bound,
        BetaMode::Online { horizon } => {
            if n_or_m == 0 || horizon == 0 {
                return Err(Error::Parameter("online β needs m ≥ 1 and T ≥ 1".into()));
            }
            d * (horizon as f64 / delta).ln() / (gamma * gamma * n_or_m as f64)
        }
    };
    Ok(constant * inner.sqrt())
}

/// `λ = d·log(T/δ)/(m·γ²·B²)`.
pub fn online_lambda(dim: usize, horizon: usize, delta: f64, batch_size: usize, gamma: f64, bound: f64) -> f64 {
    dim as f64 * (horizon as f64 / delta).ln() / (batch_size as f64 * gamma * gamma * bound * bound)
}

/// `Σ_i y_i log σ(⟨θ,z_i⟩) + (1−y_i) log σ(−⟨θ,z_i⟩)`.
pub fn bt_log_likelihood(theta: &RewardParams, data: &[PreferenceTuple], instance: &BanditInstance) -> Result<f64> {
    let th = theta.theta();
    let mut total = 0.0;
    for t in data {
        let u = instance.feature_diff(t)?.dot(&th);
        total += if t.label == 1 { log_sigmoid(u) } else { log_sigmoid(-u) };
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Weight of the `‖θ‖²` tie-break added to the mean negative likelihood.
    pub ridge: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 100_000, ridge: 1e-10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MleReport {
    pub theta_hat: RewardParams,
    /// `−ℓ(θ̂)` summed over the data.
    pub negative_log_likelihood: f64,
    /// Projected-gradient norm of the (mean, ridge-regularized) objective at exit.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `θ̂` sits on the boundary of the B-ball.
    pub on_boundary: bool,
}

/// Preference data collapsed to label counts per distinct comparison.
#[derive(Debug, Clone)]
pub(crate) struct PairCounts {
    pub diffs: Vec<Vector>,
    pub wins: Vec<f64>,
    pub losses: Vec<f64>,
    pub total: f64,
}

impl PairCounts {
    pub fn new(data: &[PreferenceTuple], instance: &BanditInstance) -> Result<Self> {
        let mut counts: BTreeMap<(usize, usize, usize), (f64, f64)> = BTreeMap::new();
        for t in data {
            instance.feature(t.context, t.first)?;
            instance.feature(t.context, t.second)?;
            let e = counts.entry((t.context, t.first, t.second)).or_default();
            if t.label == 1 {
                e.0 += 1.0;
            } else {
                e.1 += 1.0;
            }
        }
        let mut out = Self { diffs: Vec::new(), wins: Vec::new(), losses: Vec::new(), total: data.len() as f64 };
        for ((x, a1, a2), (w, l)) in counts {
            out.diffs.push(&instance.features()[x][a1] - &instance.features()[x][a2]);
            out.wins.push(w);
            out.losses.push(l);
        }
        Ok(out)
    }

    /// Summed negative log-likelihood and its gradient.
    pub fn nll(&self, theta: &Vector) -> (f64, Vector) {
        let mut value = 0.0;
        let mut grad = Vector::zeros(theta.len());
        for ((z, &w), &l) in self.diffs.iter().zip(&self.wins).zip(&self.losses) {
            let u = z.dot(theta);
            value -= w * log_sigmoid(u) + l * log_sigmoid(-u);
            grad.axpy(-w * sigmoid(-u) + l * sigmoid(u), z, 1.0);
        }
        (value, grad)
    }
}

/// Constrained maximum-likelihood estimate over `{‖θ‖ ≤ B}`.
///
/// Non-unique maximizers are resolved toward minimum norm by a vanishing ridge.
pub fn fit_mle(data: &[PreferenceTuple], instance: &BanditInstance, options: &MleOptions) -> Result<MleReport> {
    fit_mle_from(data, instance, options, None)
}

/// [`fit_mle`] with an explicit starting point.
pub fn fit_mle_from(
    data: &[PreferenceTuple],
    instance: &BanditInstance,
    options: &MleOptions,
    init: Option<&Vector>,
) -> Result<MleReport> {
    if data.is_empty() {
        return Err(Error::Input("MLE needs at least one preference tuple".into()));
    }
    let counts = PairCounts::new(data, instance)?;
    let bound = instance.bound();
    let scale = 1.0 / counts.total;
    let ridge = options.ridge;
    let start = init.cloned().unwrap_or_else(|| Vector::zeros(instance.dim()));
    let out = minimize_on_ball(
        |th| {
            let (v, g) = counts.nll(th);
            (v * scale + ridge * th.norm_squared(), g * scale + th * (2.0 * ridge))
        },
        &start,
        bound,
        PgOptions { tolerance: options.tolerance, max_iterations: options.max_iterations },
    );
    let (nll, _) = counts.nll(&out.x);
    let on_boundary = out.x.norm() >= bound - 1e-9;
    Ok(MleReport {
        theta_hat: RewardParams::new(out.x, bound)?,
        negative_log_likelihood: nll,
        gradient_norm: out.projected_gradient_norm,
        iterations: out.iterations,
        converged: out.converged,
        on_boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_instance, InstanceSpec, Origin};
    use crate::rng::substream;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    /// One context whose actions have the given 2-d features.
    fn planar(features: &[[f64; 2]], theta_star: [f64; 2], bound: f64) -> BanditInstance {
        let k = features.len();
        BanditInstance::new(
            vec![1.0],
            vec![features.iter().map(|f| Vector::from_column_slice(f)).collect()],
            Vector::from_column_slice(&theta_star),
            bound,
            1.0,
            TabularPolicy::uniform(&[k]),
        )
        .unwrap()
    }

    fn tuple(a1: usize, a2: usize, y: u8) -> PreferenceTuple {
        PreferenceTuple::new(0, a1, a2, y, Origin::Offline).unwrap()
    }

    #[test]
    fn gamma_range() {
        assert_abs_diff_eq!(link_gamma(0.0), 0.25);
        assert!(link_gamma(3.0) > 0.0 && link_gamma(3.0) < 0.25);
    }

    #[test]
    fn likelihood_examples() {
        let inst = planar(&[[0.5, 0.0], [0.0, 0.5], [0.0, 0.0]], [0.0, 0.0], 4.0);
        let data = vec![tuple(0, 1, 1), tuple(1, 2, 0), tuple(0, 2, 1)];
        let zero = RewardParams::zeros(2, 4.0);
        assert_abs_diff_eq!(bt_log_likelihood(&zero, &data, &inst).unwrap(), 3.0 * 0.5f64.ln(), epsilon = 1e-15);

        // ⟨θ, z⟩ = ln 3 with z = (0.5, 0)
        let th = RewardParams::new(Vector::from_vec(vec![2.0 * 3f64.ln(), 0.0]), 4.0).unwrap();
        let one = vec![tuple(0, 2, 1)];
        assert_abs_diff_eq!(bt_log_likelihood(&th, &one, &inst).unwrap(), 0.75f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(0.75f64.ln(), -0.28768, epsilon = 1e-5);
    }

    #[test]
    fn balanced_labels_give_zero() {
        let inst = planar(&[[0.6, 0.2], [0.0, 0.0]], [0.0, 0.0], 2.0);
        let data = vec![tuple(0, 1, 1), tuple(0, 1, 0), tuple(0, 1, 1), tuple(0, 1, 0)];
        let rep = fit_mle(&data, &inst, &MleOptions::default()).unwrap();
        assert!(rep.converged);
        assert!(rep.theta_hat.theta().norm() < 1e-7, "{:?}", rep.theta_hat);
        // the paired-label likelihood at u = 0 is 2·log(1/2) per pair
        assert_abs_diff_eq!(rep.negative_log_likelihood, -4.0 * 0.5f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn separable_data_hits_the_boundary() {
        let inst = planar(&[[0.6, 0.3], [0.0, 0.0]], [0.0, 0.0], 2.0);
        let data = vec![tuple(0, 1, 1); 5];
        let rep = fit_mle(&data, &inst, &MleOptions::default()).unwrap();
        assert!(rep.on_boundary && rep.converged);
        let z = Vector::from_vec(vec![0.6, 0.3]);
        let expected = &z * (2.0 / z.norm());
        assert_abs_diff_eq!((rep.theta_hat.theta() - &expected).norm(), 0.0, epsilon = 1e-6);

        // dense polar grid over the ball as an independent check
        let mut best = (f64::NEG_INFINITY, Vector::zeros(2));
        for i in 0..=200 {
            for j in 0..720 {
                let r = 2.0 * i as f64 / 200.0;
                let a = j as f64 * std::f64::consts::PI / 360.0;
                let th = Vector::from_vec(vec![r * a.cos(), r * a.sin()]);
                let ll = bt_log_likelihood(&RewardParams::new(th.clone(), 2.0).unwrap(), &data, &inst).unwrap();
                if ll > best.0 {
                    best = (ll, th);
                }
            }
        }
        assert!((best.1 - expected).norm() < 0.02);
    }

    /// Plain fixed-step gradient ascent, independent of the production solver.
    fn reference_ascent(data: &[PreferenceTuple], inst: &BanditInstance) -> Vector {
        let mut th = Vector::zeros(inst.dim());
        let n = data.len() as f64;
        for _ in 0..20_000 {
            let mut g = Vector::zeros(inst.dim());
            for t in data {
                let z = inst.feature_diff(t).unwrap();
                let y = t.label as f64;
                g += &z * (y - sigmoid(z.dot(&th)));
            }
            th += g * (2.0 / n);
            let norm = th.norm();
            if norm > inst.bound() {
                th *= inst.bound() / norm;
            }
        }
        th
    }

    #[test]
    fn mle_is_consistent() {
        let inst = planar(&[[0.9, 0.0], [0.0, 0.9], [-0.6, 0.6], [0.0, 0.0]], [1.2, -0.7], 2.0);
        let mut rng = substream(21, &[]);
        let data: Vec<_> = (0..10_000)
            .map(|_| {
                let a1 = rng.random_range(0..4);
                let a2 = (a1 + rng.random_range(1..4)) % 4;
                let y = inst.sample_preference(0, a1, a2, &mut rng).unwrap();
                tuple(a1, a2, y)
            })
            .collect();
        let rep = fit_mle(&data, &inst, &MleOptions::default()).unwrap();
        assert!(rep.converged);
        let th = rep.theta_hat.theta();
        assert!((&th - inst.theta_star()).norm() <= 0.1, "{th}");
        assert!((th - reference_ascent(&data, &inst)).norm() < 1e-4);
    }

    #[test]
    fn mle_is_a_local_maximum() {
        let mut rng = substream(22, &[]);
        let inst = generate_instance(&InstanceSpec::new(3, 4, 5, 1.5, 1.0), &mut rng).unwrap();
        let data: Vec<_> = (0..300)
            .map(|_| {
                let x = inst.sample_context(&mut rng);
                let a1 = rng.random_range(0..5);
                let a2 = (a1 + rng.random_range(1..5)) % 5;
                let y = inst.sample_preference(x, a1, a2, &mut rng).unwrap();
                PreferenceTuple::new(x, a1, a2, y, Origin::Offline).unwrap()
            })
            .collect();
        let rep = fit_mle(&data, &inst, &MleOptions::default()).unwrap();
        let th = rep.theta_hat.theta();
        let base = bt_log_likelihood(&rep.theta_hat, &data, &inst).unwrap();
        for _ in 0..100 {
            let probe = crate::solver::project_ball(&(&th + crate::env::sample_unit_vector(3, &mut rng) * 1e-3), 1.5);
            let ll = bt_log_likelihood(&RewardParams::new(probe, 1.5).unwrap(), &data, &inst).unwrap();
            assert!(base >= ll - 1e-9);
        }
    }

    #[test]
    fn mle_rejects_empty_data() {
        let inst = planar(&[[0.1, 0.0], [0.0, 0.0]], [0.0, 0.0], 1.0);
        assert!(matches!(fit_mle(&[], &inst, &MleOptions::default()), Err(Error::Input(_))));
    }

    #[test]
    fn covariance_examples() {
        let inst = planar(&[[1.0, 0.0], [0.0, 0.0]], [0.0, 0.0], 1.0);
        let empty = covariance(&[], &inst, 2.5, None).unwrap();
        assert_eq!(empty.matrix(), &(DMatrix::identity(2, 2) * 2.5));

        let one = covariance(&[tuple(0, 1, 1)], &inst, 1.0, None).unwrap();
        assert_eq!(one.matrix(), &DMatrix::from_diagonal(&Vector::from_vec(vec![2.0, 1.0])));

        let two = covariance(&[tuple(0, 1, 1), tuple(0, 1, 0)], &inst, 1.0, Some(2)).unwrap();
        assert_eq!(two.matrix(), &DMatrix::from_diagonal(&Vector::from_vec(vec![2.0, 1.0])));

        assert!(matches!(covariance(&[], &inst, 0.0, None), Err(Error::Parameter(_))));
        assert!(matches!(covariance(&[], &inst, -1.0, None), Err(Error::Parameter(_))));
        assert!(matches!(covariance(&[], &inst, 1.0, Some(0)), Err(Error::Parameter(_))));
    }

    #[test]
    fn covariance_is_symmetric_positive_definite() {
        let mut rng = substream(23, &[]);
        for m in [None, Some(7)] {
            let diffs: Vec<Vector> = (0..50).map(|_| crate::env::sample_ball(4, 2.0, &mut rng)).collect();
            let cov = CovMatrix::from_differences(&diffs, 4, 0.3, m).unwrap();
            let a = cov.matrix();
            assert!((a - a.transpose()).amax() <= 1e-10);
            assert!(cov.min_eigenvalue() >= 0.3 - 1e-10);
        }
    }

    #[test]
    fn bonus_examples() {
        let cov = CovMatrix::identity(2, 1.0).unwrap();
        let phi = Vector::from_vec(vec![0.3, 0.4]);
        assert_abs_diff_eq!(pointwise_bonus(&phi, &phi, &cov).unwrap(), 0.0);
        let e1 = Vector::from_vec(vec![1.0, 0.0]);
        assert_abs_diff_eq!(pointwise_bonus(&e1, &Vector::zeros(2), &cov).unwrap(), 1.0, epsilon = 1e-15);
        let d = CovMatrix::from_differences([Vector::from_vec(vec![3f64.sqrt(), 0.0])], 2, 1.0, None).unwrap();
        assert_abs_diff_eq!(
            pointwise_bonus(&Vector::from_vec(vec![2.0, 0.0]), &Vector::zeros(2), &d).unwrap(),
            1.0,
            epsilon = 1e-14
        );
        assert!(pointwise_bonus(&Vector::zeros(3), &Vector::zeros(3), &cov).is_err());
    }

    #[test]
    fn expected_bonus_examples() {
        let mut rng = substream(24, &[]);
        let inst = generate_instance(&InstanceSpec::new(3, 2, 4, 1.0, 1.0), &mut rng).unwrap();
        let diffs: Vec<Vector> = (0..6).map(|_| crate::env::sample_ball(3, 1.0, &mut rng)).collect();
        let cov = CovMatrix::from_differences(&diffs, 3, 0.5, None).unwrap();
        let nu = Vector::from_vec(vec![0.1, -0.2, 0.05]);

        let mixed = TabularPolicy::new(vec![vec![0.1, 0.2, 0.3, 0.4], vec![0.7, 0.1, 0.1, 0.1]]).unwrap();
        let mean = inst.expected_feature(&mixed);
        assert_abs_diff_eq!(expected_bonus(&mixed, &mean, &cov, &inst).unwrap(), 0.0, epsilon = 1e-12);

        let outer = expected_bonus(&mixed, &nu, &cov, &inst).unwrap();
        let inner: f64 = (0..2)
            .map(|x| {
                inst.d0()[x]
                    * (0..4)
                        .map(|a| mixed.prob(x, a) * pointwise_bonus(&inst.features()[x][a], &nu, &cov).unwrap())
                        .sum::<f64>()
            })
            .sum();
        assert!(outer <= inner + 1e-10);

        let single = BanditInstance::new(
            vec![1.0],
            vec![inst.features()[0].clone()],
            inst.theta_star().clone(),
            1.0,
            1.0,
            TabularPolicy::uniform(&[4]),
        )
        .unwrap();
        let det = TabularPolicy::new(vec![vec![0.0, 0.0, 1.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(
            expected_bonus(&det, &nu, &cov, &single).unwrap(),
            pointwise_bonus(&inst.features()[0][2], &nu, &cov).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn in_sample_error_examples() {
        let eye = CovMatrix::identity(2, 1.0).unwrap();
        let a = RewardParams::new(Vector::from_vec(vec![3.0, 4.0]), 10.0).unwrap();
        let zero = RewardParams::zeros(2, 10.0);
        assert_abs_diff_eq!(in_sample_error(&a, &a, &eye).unwrap(), 0.0);
        assert_abs_diff_eq!(in_sample_error(&a, &zero, &eye).unwrap(), 5.0, epsilon = 1e-14);
        let d = CovMatrix::from_differences([Vector::from_vec(vec![1.0, 0.0])], 2, 1.0, None).unwrap();
        let b = RewardParams::new(Vector::from_vec(vec![1.0, 1.0]), 10.0).unwrap();
        assert_abs_diff_eq!(in_sample_error(&b, &zero, &d).unwrap(), 3f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn beta_examples() {
        assert_eq!(beta_schedule(3, 0.2, 1.0, 1.0, 0.1, 10, 0.0, BetaMode::Offline).unwrap(), 0.0);
        let b = beta_schedule(2, 0.25, 1.0, 1.0, (-1f64).exp(), 0, 1.0, BetaMode::Offline).unwrap();
        assert_abs_diff_eq!(b, 7.0, epsilon = 1e-12);
        let mode = BetaMode::Online { horizon: 20 };
        let b1 = beta_schedule(4, 0.1, 1.0, 2.0, 0.05, 64, 1.0, mode).unwrap();
        let b2 = beta_schedule(4, 0.1, 1.0, 2.0, 0.05, 128, 1.0, mode).unwrap();
        assert_abs_diff_eq!(b2 / b1, 1.0 / 2f64.sqrt(), epsilon = 1e-12);
        assert!(beta_schedule(4, 0.1, 1.0, 2.0, 1.5, 64, 1.0, mode).is_err());
    }

    #[test]
    fn likelihood_is_concave() {
        let mut rng = substream(25, &[]);
        let inst = generate_instance(&InstanceSpec::new(3, 3, 4, 3.0, 1.0), &mut rng).unwrap();
        let data: Vec<_> = (0..50)
            .map(|_| {
                let x = inst.sample_context(&mut rng);
                let a1 = rng.random_range(0..4);
                let a2 = (a1 + rng.random_range(1..4)) % 4;
                PreferenceTuple::new(x, a1, a2, rng.random_range(0..2), Origin::Offline).unwrap()
            })
            .collect();
        for _ in 0..200 {
            let t1 = crate::env::sample_ball(3, 3.0, &mut rng);
            let t2 = crate::env::sample_ball(3, 3.0, &mut rng);
            let alpha: f64 = rng.random();
            let ll = |t: Vector| bt_log_likelihood(&RewardParams::new(t, 3.0).unwrap(), &data, &inst).unwrap();
            let mid = ll(&t1 * alpha + &t2 * (1.0 - alpha));
            assert!(mid >= alpha * ll(t1.clone()) + (1.0 - alpha) * ll(t2.clone()) - 1e-9);
        }
    }
}
