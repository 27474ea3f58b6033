//! Bound-constrained trust-region ascent on forward-difference gradients.
//!
//! The surrogate is quadratic: the finite-difference gradient plus a BFGS
//! curvature estimate, stepped by dogleg inside the trust radius and clipped
//! to the box. Steps are accepted or rejected with the usual ratio of actual
//! to predicted improvement.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::optim::{Bounds, OptimResult, Tracker};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrustRegionOptions {
    /// Initial forward-difference step.
    pub fd_step: f64,
    pub min_fd_step: f64,
    pub initial_radius: f64,
    pub max_radius: f64,
    /// Stop once the trust radius falls below this.
    pub tolerance: f64,
}

impl Default for TrustRegionOptions {
    fn default() -> Self {
        TrustRegionOptions { fd_step: 0.1, min_fd_step: 1e-6, initial_radius: 0.5, max_radius: 10.0, tolerance: 1e-3 }
    }
}

const ETA_ACCEPT: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-10;

/// Forward-difference gradient of `-f` at `x`. Probes that would leave the
/// box step backwards instead.
fn fd_gradient<F: Fn(&[f64]) -> f64 + Sync>(
    t: &mut Tracker<'_, F>,
    bounds: &Bounds,
    x: &[f64],
    fx: f64,
    h: f64,
) -> DVector<f64> {
    let d = x.len();
    let steps: Vec<f64> = (0..d).map(|i| if x[i] + h <= bounds.upper[i] { h } else { -h }).collect();
    let probes: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let mut p = x.to_vec();
            p[i] += steps[i];
            p
        })
        .collect();
    let values = t.eval_batch(&probes);
    DVector::from_iterator(d, (0..d).map(|i| -(values[i] - fx) / steps[i]))
}

/// Dogleg step for minimizing `g·s + ½ sᵀBs` within `‖s‖ ≤ radius`.
fn dogleg(g: &DVector<f64>, b: &DMatrix<f64>, radius: f64) -> DVector<f64> {
    let gnorm = g.norm();
    let gbg = g.dot(&(b * g));
    let steepest = if gbg > 0.0 { -g * (g.dot(g) / gbg) } else { -g * (radius / gnorm) };
    if steepest.norm() >= radius {
        return -g * (radius / gnorm);
    }
    let newton = match b.clone().cholesky() {
        Some(ch) => -ch.solve(g),
        None => return steepest,
    };
    if newton.norm() <= radius {
        return newton;
    }
    let diff = &newton - &steepest;
    let (a, bq, c) = (diff.dot(&diff), 2.0 * steepest.dot(&diff), steepest.dot(&steepest) - radius * radius);
    let tau = (-bq + (bq * bq - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a);
    steepest + diff * tau
}

/// Maximizes `f` over `bounds` from `x0` using at most `budget` evaluations.
pub fn optimize_finite_difference<F: Fn(&[f64]) -> f64 + Sync>(
    f: &F,
    x0: &[f64],
    bounds: &Bounds,
    budget: usize,
    opts: &TrustRegionOptions,
) -> Result<OptimResult> {
    let d = x0.len();
    if d == 0 {
        return Err(Error::argument("empty decision vector"));
    }
    if budget < d + 1 {
        return Err(Error::argument(format!("finite-difference budget {budget} below dimension + 1 = {}", d + 1)));
    }
    bounds.check_start(x0)?;
    let mut t = Tracker::new(f, budget, d);
    let mut x = x0.to_vec();
    let mut fx = t.eval(&x);
    let mut radius = opts.initial_radius;
    let mut h = opts.fd_step;
    let mut hess = DMatrix::<f64>::identity(d, d);
    let mut grad: Option<DVector<f64>> = None;
    let mut pending: Option<(DVector<f64>, DVector<f64>)> = None;

    loop {
        let g = match grad.take() {
            Some(g) => g,
            None => {
                if t.remaining() < d {
                    break;
                }
                let g = fd_gradient(&mut t, bounds, &x, fx, h);
                if let Some((s, g_prev)) = pending.take() {
                    let y = &g - &g_prev;
                    let sy = s.dot(&y);
                    if sy > 1e-12 {
                        let bs = &hess * &s;
                        hess += &y * y.transpose() / sy - &bs * bs.transpose() / s.dot(&bs);
                    }
                }
                g
            }
        };

        // Freeze coordinates pinned at a bound with the descent direction pointing out.
        let mut free = g.clone();
        for i in 0..d {
            let pinned_low = x[i] <= bounds.lower[i] && g[i] > 0.0;
            let pinned_high = x[i] >= bounds.upper[i] && g[i] < 0.0;
            if pinned_low || pinned_high {
                free[i] = 0.0;
            }
        }
        if free.norm() <= GRAD_TOL {
            if h > opts.min_fd_step {
                h = (h * 0.1).max(opts.min_fd_step);
                continue;
            }
            break;
        }

        let mut step = dogleg(&free, &hess, radius);
        let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + s).collect();
        bounds.clip(&mut trial);
        step = DVector::from_iterator(d, trial.iter().zip(&x).map(|(a, b)| a - b));
        let mut predicted = -(g.dot(&step) + 0.5 * step.dot(&(&hess * &step)));
        if !(predicted > 0.0) {
            let mut cauchy: Vec<f64> = x.iter().zip(free.iter()).map(|(a, gi)| a - gi * radius / free.norm()).collect();
            bounds.clip(&mut cauchy);
            step = DVector::from_iterator(d, cauchy.iter().zip(&x).map(|(a, b)| a - b));
            trial = cauchy;
            predicted = -g.dot(&step);
        }
        if !(predicted > 0.0) || step.norm() == 0.0 {
            radius *= 0.25;
            if radius < opts.tolerance {
                break;
            }
            grad = Some(g);
            continue;
        }
        if t.remaining() == 0 {
            break;
        }
        let f_trial = t.eval(&trial);
        let rho = (f_trial - fx) / predicted;
        let snorm = step.norm();
        if rho < 0.25 {
            radius = 0.25 * snorm;
        } else if rho > 0.75 && snorm >= 0.99 * radius {
            radius = (2.0 * radius).min(opts.max_radius);
        }
        if rho > ETA_ACCEPT {
            x = trial;
            fx = f_trial;
            pending = Some((step, g));
        } else {
            // A rejected step means the difference step may be too coarse
            // for the current scale; re-estimate the gradient with a finer one.
            let finer = (0.1 * radius).clamp(opts.min_fd_step, h);
            if finer < h {
                h = finer;
            } else {
                grad = Some(g);
            }
        }
        if radius < opts.tolerance {
            break;
        }
    }
    Ok(t.finish())
}

#[cfg(test)]
mod tests {
    use super::super::optim::planted::{quadratic, random_start};
    use super::*;

    #[test]
    fn recovers_planted_optimum() {
        for seed in 0..5 {
            let dim = 5;
            let x0 = random_start(dim, seed);
            let b = Bounds::uniform(dim, 0.5, 5.0);
            let r = optimize_finite_difference(&quadratic, &x0, &b, 500 * dim, &TrustRegionOptions::default()).unwrap();
            assert!(r.best_value > -1e-2, "seed {seed}: {}", r.best_value);
            assert!(b.contains(&r.best_x));
            assert!(r.evaluations <= 500 * dim);
        }
    }

    #[test]
    fn optimum_on_the_boundary() {
        let f = |x: &[f64]| -x.iter().map(|v| (v - 6.0).powi(2)).sum::<f64>();
        let b = Bounds::uniform(3, 0.5, 5.0);
        let r = optimize_finite_difference(&f, &[1.0, 2.0, 3.0], &b, 600, &TrustRegionOptions::default()).unwrap();
        assert!(r.best_x.iter().all(|v| (v - 5.0).abs() < 1e-3), "{:?}", r.best_x);
    }

    #[test]
    fn minimal_budget_takes_no_step() {
        let x0 = random_start(4, 1);
        let b = Bounds::uniform(4, 0.5, 5.0);
        let r = optimize_finite_difference(&quadratic, &x0, &b, 5, &TrustRegionOptions::default()).unwrap();
        assert_eq!(r.evaluations, 5);
        assert!(r.best_value >= quadratic(&x0));
        assert!(optimize_finite_difference(&quadratic, &x0, &b, 4, &TrustRegionOptions::default()).is_err());
    }

    #[test]
    fn constant_objective_returns_start() {
        let x0 = vec![1.0, 2.0];
        let b = Bounds::uniform(2, 0.5, 5.0);
        let r = optimize_finite_difference(&|_: &[f64]| 7.0, &x0, &b, 100, &TrustRegionOptions::default()).unwrap();
        assert_eq!(r.best_x, x0);
        assert_eq!(r.best_value, 7.0);
    }

    #[test]
    fn trajectory_is_monotone() {
        let x0 = random_start(3, 9);
        let b = Bounds::uniform(3, 0.5, 5.0);
        let r = optimize_finite_difference(&quadratic, &x0, &b, 300, &TrustRegionOptions::default()).unwrap();
        assert!(r.trajectory.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(r.trajectory.len(), r.evaluations);
    }
}
