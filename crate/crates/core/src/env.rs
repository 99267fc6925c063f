//! The synthetic KL-regularized preference bandit.
//!
//! Contexts and actions are finite, so the regularized objective
//! `J(π) = E_{x~d0}[E_{a~π}[r*(x,a)] − η·KL(π(·|x) ‖ π0(·|x))]` is an exact
//! finite sum.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{gibbs_oracle, kl_divergence, TabularPolicy};

pub type Vector = DVector<f64>;

const SIMPLEX_TOL: f64 = 1e-12;

/// Logistic function, evaluated without overflow.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log σ(z)`, stable for large |z|.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Bradley-Terry probability that the first response is preferred.
pub fn bt_preference_prob(r1: f64, r2: f64) -> Result<f64> {
    if !r1.is_finite() || !r2.is_finite() {
        return Err(Error::Domain(format!("non-finite reward ({r1}, {r2})")));
    }
    Ok(sigmoid(r1 - r2))
}

/// Where a preference tuple came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Offline,
    Iteration(usize),
}

/// One labeled comparison `(x, a¹, a², y)`; `label == 1` means `a¹ ≻ a²`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceTuple {
    pub context: usize,
    pub first: usize,
    pub second: usize,
    pub label: u8,
    pub origin: Origin,
}

impl PreferenceTuple {
    pub fn new(context: usize, first: usize, second: usize, label: u8, origin: Origin) -> Result<Self> {
        if first == second {
            return Err(Error::Input(format!("tuple compares action {first} with itself")));
        }
        if label > 1 {
            return Err(Error::Input(format!("label must be 0 or 1, got {label}")));
        }
        Ok(Self { context, first, second, label, origin })
    }

    /// The preferred and the rejected action, in that order.
    pub fn winner_loser(&self) -> (usize, usize) {
        if self.label == 1 {
            (self.first, self.second)
        } else {
            (self.second, self.first)
        }
    }
}

/// Per-(context, action) scalar table: rewards, bonuses, penalized rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    rows: Vec<Vec<f64>>,
}

impl RewardTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    /// `r_θ(x,a) = ⟨θ, φ(x,a)⟩` for every pair of the instance.
    pub fn linear(instance: &BanditInstance, theta: &Vector) -> Self {
        let rows = instance
            .features
            .iter()
            .map(|row| row.iter().map(|phi| phi.dot(theta)).collect())
            .collect();
        Self { rows }
    }

    pub fn num_contexts(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.rows[x]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, x: usize, a: usize) -> f64 {
        self.rows[x][a]
    }

    pub fn map(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(x, row)| row.iter().enumerate().map(|(a, &v)| f(x, a, v)).collect())
            .collect();
        Self { rows }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|_, _, v| c * v)
    }

    pub fn sub(&self, other: &RewardTable) -> Self {
        self.map(|x, a, v| v - other.get(x, a))
    }
}

/// A finite KL-regularized preference bandit with linear ground-truth reward.
#[derive(Debug, Clone)]
pub struct BanditInstance {
    context_names: Vec<String>,
    action_names: Vec<Vec<String>>,
    d0: Vec<f64>,
    features: Vec<Vec<Vector>>,
    theta_star: Vector,
    bound: f64,
    eta: f64,
    pi0: TabularPolicy,
}

impl BanditInstance {
    /// Validates and assembles an instance. Context and action names default
    /// to `x{i}` / `a{j}`.
    pub fn new(
        d0: Vec<f64>,
        features: Vec<Vec<Vector>>,
        theta_star: Vector,
        bound: f64,
        eta: f64,
        pi0: TabularPolicy,
    ) -> Result<Self> {
        let context_names = (0..d0.len()).map(|i| format!("x{i}")).collect();
        let action_names = features
            .iter()
            .map(|row| (0..row.len()).map(|j| format!("a{j}")).collect())
            .collect();
        Self::with_names(context_names, action_names, d0, features, theta_star, bound, eta, pi0)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_names(
        context_names: Vec<String>,
        action_names: Vec<Vec<String>>,
        d0: Vec<f64>,
        features: Vec<Vec<Vector>>,
        theta_star: Vector,
        bound: f64,
        eta: f64,
        pi0: TabularPolicy,
    ) -> Result<Self> {
        if d0.is_empty() {
            return Err(Error::Input("instance has no contexts".into()));
        }
        if features.len() != d0.len() || context_names.len() != d0.len() || action_names.len() != d0.len() {
            return Err(Error::Input("context count mismatch between d0, features and names".into()));
        }
        if d0.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Input("d0 weights must be finite and nonnegative".into()));
        }
        let total: f64 = d0.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Input(format!("d0 sums to {total}, not 1")));
        }
        if !(bound > 0.0) || !bound.is_finite() {
            return Err(Error::Parameter(format!("bound B must be positive, got {bound}")));
        }
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::Parameter(format!("eta must be positive, got {eta}")));
        }
        let dim = theta_star.len();
        if dim == 0 {
            return Err(Error::Input("feature dimension must be at least 1".into()));
        }
        if theta_star.norm() > bound + 1e-9 {
            return Err(Error::Input(format!("‖θ*‖ = {} exceeds B = {bound}", theta_star.norm())));
        }
        for (x, row) in features.iter().enumerate() {
            if row.len() < 2 {
                return Err(Error::Input(format!("context {x} has fewer than two actions")));
            }
            if action_names[x].len() != row.len() {
                return Err(Error::Input(format!("context {x}: action name count mismatch")));
            }
            for (a, phi) in row.iter().enumerate() {
                if phi.len() != dim {
                    return Err(Error::Input(format!("φ({x},{a}) has dimension {}, expected {dim}", phi.len())));
                }
                if phi.norm() > 1.0 + 1e-12 {
                    return Err(Error::Input(format!("‖φ({x},{a})‖ = {} exceeds 1", phi.norm())));
                }
            }
        }
        if pi0.num_contexts() != d0.len() {
            return Err(Error::Input("π0 context count mismatch".into()));
        }
        for (x, row) in features.iter().enumerate() {
            let p = pi0.row(x);
            if p.len() != row.len() {
                return Err(Error::Input(format!("π0 row {x} has wrong action count")));
            }
            if p.iter().any(|&v| v <= 0.0) {
                return Err(Error::Input(format!("π0 must have full support (context {x})")));
            }
        }
        Ok(Self { context_names, action_names, d0, features, theta_star, bound, eta, pi0 })
    }

    pub fn num_contexts(&self) -> usize {
        self.d0.len()
    }

    pub fn num_actions(&self, x: usize) -> usize {
        self.features[x].len()
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn d0(&self) -> &[f64] {
        &self.d0
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Link constant `γ = 1/(2 + e^{−B} + e^{B})`.
    pub fn gamma(&self) -> f64 {
        crate::reward::link_gamma(self.bound)
    }

    pub fn theta_star(&self) -> &Vector {
        &self.theta_star
    }

    pub fn pi0(&self) -> &TabularPolicy {
        &self.pi0
    }

    pub fn context_name(&self, x: usize) -> &str {
        &self.context_names[x]
    }

    pub fn action_name(&self, x: usize, a: usize) -> &str {
        &self.action_names[x][a]
    }

    pub fn features(&self) -> &[Vec<Vector>] {
        &self.features
    }

    pub fn feature(&self, x: usize, a: usize) -> Result<&Vector> {
        self.features
            .get(x)
            .and_then(|row| row.get(a))
            .ok_or_else(|| Error::Lookup(format!("no action {a} in context {x}")))
    }

    /// `φ(x,a¹) − φ(x,a²)` for a tuple.
    pub fn feature_diff(&self, t: &PreferenceTuple) -> Result<Vector> {
        Ok(self.feature(t.context, t.first)? - self.feature(t.context, t.second)?)
    }

    /// `φ(x,π) = E_{a~π(·|x)} φ(x,a)`.
    pub fn mean_feature(&self, pi: &TabularPolicy, x: usize) -> Vector {
        let mut out = Vector::zeros(self.dim());
        for (p, phi) in pi.row(x).iter().zip(&self.features[x]) {
            out.axpy(*p, phi, 1.0);
        }
        out
    }

    /// `E_{x~d0} φ(x,π)`.
    pub fn expected_feature(&self, pi: &TabularPolicy) -> Vector {
        let mut out = Vector::zeros(self.dim());
        for (x, &w) in self.d0.iter().enumerate() {
            if w > 0.0 {
                out.axpy(w, &self.mean_feature(pi, x), 1.0);
            }
        }
        out
    }

    /// Ground-truth rewards `r*(x,a) = ⟨θ*, φ(x,a)⟩`.
    pub fn true_rewards(&self) -> RewardTable {
        RewardTable::linear(self, &self.theta_star)
    }

    /// The KL-regularized optimum `π*`, i.e. the Gibbs policy of `r*`.
    pub fn optimal_policy(&self) -> TabularPolicy {
        gibbs_oracle(&self.true_rewards(), &self.pi0, self.eta).expect("instance eta is positive")
    }

    /// Draws a Bradley-Terry label for `(x, a1, a2)` under `θ*`.
    pub fn sample_preference<R: Rng + ?Sized>(&self, x: usize, a1: usize, a2: usize, rng: &mut R) -> Result<u8> {
        let r1 = self.feature(x, a1)?.dot(&self.theta_star);
        let r2 = self.feature(x, a2)?.dot(&self.theta_star);
        let p = bt_preference_prob(r1, r2)?;
        Ok(u8::from(rng.random::<f64>() < p))
    }

    /// `n` offline comparisons: `x ~ d0`, `a¹ ~ behavior`, `a²` from the
    /// behavior conditioned on `a² ≠ a¹` (from `π0` if the behavior row is a
    /// point mass), and a Bradley-Terry label.
    pub fn sample_comparisons<R: Rng + ?Sized>(
        &self,
        behavior: &TabularPolicy,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<PreferenceTuple>> {
        self.check_shape(behavior)?;
        (0..n)
            .map(|_| {
                let x = self.sample_context(rng);
                let a1 = behavior.sample(x, rng);
                let a2 = sample_excluding(behavior.row(x), self.pi0.row(x), a1, rng);
                let y = self.sample_preference(x, a1, a2, rng)?;
                PreferenceTuple::new(x, a1, a2, y, Origin::Offline)
            })
            .collect()
    }

    /// Draws a context from `d0`.
    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.d0, rng)
    }

    /// Per-context regularized value `E_π[r] − η·KL(π‖π0)` under the given rewards.
    pub fn context_value(&self, pi: &TabularPolicy, rewards: &RewardTable, x: usize) -> Result<f64> {
        let reward: f64 = pi.row(x).iter().zip(rewards.row(x)).map(|(p, r)| p * r).sum();
        Ok(reward - self.eta * kl_divergence(pi, &self.pi0, x)?)
    }

    /// Exact `J(π)`.
    pub fn evaluate_value(&self, pi: &TabularPolicy) -> Result<f64> {
        self.check_shape(pi)?;
        let rewards = self.true_rewards();
        let mut total = 0.0;
        for (x, &w) in self.d0.iter().enumerate() {
            if w > 0.0 {
                total += w * self.context_value(pi, &rewards, x)?;
            }
        }
        Ok(total)
    }

    /// `J(π*) − J(π)`.
    pub fn suboptimality(&self, pi: &TabularPolicy) -> Result<f64> {
        Ok(self.optimal_value() - self.evaluate_value(pi)?)
    }

    /// `J(π*) = η·E_{x~d0} log Σ_a π0(a|x) exp(r*(x,a)/η)`.
    pub fn optimal_value(&self) -> f64 {
        let rewards = self.true_rewards();
        self.d0
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(x, &w)| {
                let logits: Vec<f64> = self
                    .pi0
                    .row(x)
                    .iter()
                    .zip(rewards.row(x))
                    .map(|(p, r)| p.ln() + r / self.eta)
                    .collect();
                w * self.eta * log_sum_exp(&logits)
            })
            .sum()
    }

    pub fn check_shape(&self, pi: &TabularPolicy) -> Result<()> {
        if pi.num_contexts() != self.num_contexts() {
            return Err(Error::Input(format!(
                "policy has {} contexts, instance has {}",
                pi.num_contexts(),
                self.num_contexts()
            )));
        }
        for x in 0..self.num_contexts() {
            if pi.row(x).len() != self.num_actions(x) {
                return Err(Error::Input(format!("policy row {x} has wrong action count")));
            }
        }
        Ok(())
    }

    /// Same instance with a different ground-truth parameter.
    pub fn with_theta_star(&self, theta_star: Vector) -> Result<Self> {
        Self::with_names(
            self.context_names.clone(),
            self.action_names.clone(),
            self.d0.clone(),
            self.features.clone(),
            theta_star,
            self.bound,
            self.eta,
            self.pi0.clone(),
        )
    }

    /// Same instance with a different KL coefficient.
    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        Self::with_names(
            self.context_names.clone(),
            self.action_names.clone(),
            self.d0.clone(),
            self.features.clone(),
            self.theta_star.clone(),
            self.bound,
            eta,
            self.pi0.clone(),
        )
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Inverse-CDF draw from a finite probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the final partial sum; return the last positive entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Draws from `row` conditioned on avoiding `exclude`; falls back to `fallback`
/// (under the same conditioning) when `row` is a point mass on `exclude`.
pub fn sample_excluding<R: Rng + ?Sized>(row: &[f64], fallback: &[f64], exclude: usize, rng: &mut R) -> usize {
    let masked = |r: &[f64]| -> Vec<f64> {
        r.iter().enumerate().map(|(a, p)| if a == exclude { 0.0 } else { *p }).collect()
    };
    let w = masked(row);
    if w.iter().sum::<f64>() > 0.0 {
        sample_categorical(&w, rng)
    } else {
        sample_categorical(&masked(fallback), rng)
    }
}

/// Uniform draw from the Euclidean ball of the given radius.
pub fn sample_ball<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> Vector {
    let dir = sample_unit_vector(dim, rng);
    let u: f64 = rng.random();
    dir * (radius * u.powf(1.0 / dim as f64))
}

pub fn sample_unit_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vector {
    loop {
        let v = Vector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Parameters for the random instance generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub dim: usize,
    pub contexts: usize,
    pub actions: usize,
    pub bound: f64,
    pub eta: f64,
    /// Spread of the random `π0` logits; 0 gives a uniform `π0`.
    #[serde(default = "default_pi0_spread")]
    pub pi0_spread: f64,
}

fn default_pi0_spread() -> f64 {
    0.5
}

impl InstanceSpec {
    pub fn new(dim: usize, contexts: usize, actions: usize, bound: f64, eta: f64) -> Self {
        Self { dim, contexts, actions, bound, eta, pi0_spread: default_pi0_spread() }
    }
}

/// Random instance: features uniform in the unit ball, uniform `d0`,
/// `π0 ∝ exp(spread·N(0,1))`, and `θ*` uniform in the radius-B ball.
pub fn generate_instance<R: Rng + ?Sized>(spec: &InstanceSpec, rng: &mut R) -> Result<BanditInstance> {
    if spec.contexts == 0 || spec.actions < 2 || spec.dim == 0 {
        return Err(Error::Parameter("generator needs ≥1 context, ≥2 actions, dim ≥1".into()));
    }
    let features: Vec<Vec<Vector>> = (0..spec.contexts)
        .map(|_| (0..spec.actions).map(|_| sample_ball(spec.dim, 1.0, rng)).collect())
        .collect();
    let d0 = vec![1.0 / spec.contexts as f64; spec.contexts];
    let pi0_rows = (0..spec.contexts)
        .map(|_| {
            let logits: Vec<f64> = (0..spec.actions)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    spec.pi0_spread * z
                })
                .collect();
            softmax(&logits)
        })
        .collect();
    let pi0 = TabularPolicy::new(pi0_rows)?;
    let theta_star = sample_ball(spec.dim, spec.bound, rng);
    BanditInstance::new(d0, features, theta_star, spec.bound, spec.eta, pi0)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    normalize(exps)
}

/// Rescales nonnegative weights to sum to one.
pub(crate) fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    for p in v.iter_mut() {
        *p /= total;
    }
    v
}
