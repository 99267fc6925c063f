//! Projected gradient descent on a Euclidean ball.
//!
//! Steps start from a Barzilai-Borwein estimate and are shortened by
//! backtracking along the projection arc until the Armijo condition holds.
//! Termination is on the norm of the projected-gradient map
//! `x − P(x − ∇f(x))`.

use nalgebra::DVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PgOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 100_000 }
    }
}

#[derive(Debug, Clone)]
pub struct PgOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub projected_gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn project_ball(x: &DVector<f64>, radius: f64) -> DVector<f64> {
    let n = x.norm();
    if n > radius {
        x * (radius / n)
    } else {
        x.clone()
    }
}

const ARMIJO: f64 = 1e-4;

/// Minimizes `f` over `{‖x‖ ≤ radius}`. `f` returns value and gradient.
pub fn minimize_on_ball<F>(f: F, x0: &DVector<f64>, radius: f64, opts: PgOptions) -> PgOutcome
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    minimize_on_ball_certified(f, x0, radius, opts, |_| false)
}

/// As [`minimize_on_ball`], but also stops when `certify(x)` accepts the
/// iterate. For objectives with a kink, where `x − P(x − ∇f)` need not vanish
/// at the minimizer, `certify` supplies a subgradient optimality test.
pub fn minimize_on_ball_certified<F, C>(
    mut f: F,
    x0: &DVector<f64>,
    radius: f64,
    opts: PgOptions,
    mut certify: C,
) -> PgOutcome
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
    C: FnMut(&DVector<f64>) -> bool,
{
    let mut x = project_ball(x0, radius);
    let (mut fx, mut g) = f(&x);
    let mut step = 1.0;
    let mut iterations = 0;
    let mut pg_norm = (&x - project_ball(&(&x - &g), radius)).norm();
    let mut certified = false;
    while pg_norm > opts.tolerance && iterations < opts.max_iterations {
        if certify(&x) {
            certified = true;
            break;
        }
        iterations += 1;
        let mut s = step;
        let mut next = None;
        for _ in 0..60 {
            let cand = project_ball(&(&x - &g * s), radius);
            let d = &cand - &x;
            if d.norm() == 0.0 {
                break;
            }
            let (fc, gc) = f(&cand);
            // small relative slack lets the search finish when f is flat to rounding
            if fc <= fx + ARMIJO * g.dot(&d) + 1e-15 * fx.abs() {
                next = Some((cand, fc, gc, d));
                break;
            }
            s *= 0.5;
        }
        let Some((cand, fc, gc, d)) = next else {
            break;
        };
        let y = &gc - &g;
        let sy = d.dot(&y);
        step = if sy > 0.0 { (d.norm_squared() / sy).clamp(1e-12, 1e12) } else { (s * 2.0).min(1e12) };
        x = cand;
        fx = fc;
        g = gc;
        pg_norm = (&x - project_ball(&(&x - &g), radius)).norm();
    }
    PgOutcome {
        x,
        value: fx,
        projected_gradient_norm: pg_norm,
        iterations,
        converged: certified || pg_norm <= opts.tolerance,
    }
}
