//! Shared optimizer plumbing: box bounds, incumbent tracking, results.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::argument("bounds must have equal length with lower <= upper"));
        }
        Ok(Bounds { lower, upper })
    }

    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Self {
        Bounds { lower: vec![lower; dim], upper: vec![upper; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| l <= v && v <= u)
    }

    pub fn clip(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    pub(crate) fn check_start(&self, x0: &[f64]) -> Result<()> {
        if !self.contains(x0) {
            return Err(Error::argument("starting point must lie inside the bounds"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub best_x: Vec<f64>,
    pub best_value: f64,
    pub evaluations: usize,
    /// Incumbent value after each evaluation.
    pub trajectory: Vec<f64>,
}

/// Counts evaluations and keeps the incumbent (maximization). Batches are
/// evaluated in parallel and recorded in submission order.
pub(crate) struct Tracker<'f, F> {
    f: &'f F,
    pub budget: usize,
    pub best_x: Vec<f64>,
    pub best_value: f64,
    pub trajectory: Vec<f64>,
}

impl<'f, F: Fn(&[f64]) -> f64 + Sync> Tracker<'f, F> {
    pub fn new(f: &'f F, budget: usize, dim: usize) -> Self {
        Tracker { f, budget, best_x: vec![f64::NAN; dim], best_value: f64::NEG_INFINITY, trajectory: Vec::new() }
    }

    pub fn used(&self) -> usize {
        self.trajectory.len()
    }

    pub fn remaining(&self) -> usize {
        self.budget - self.used()
    }

    fn record(&mut self, x: &[f64], v: f64) {
        if v > self.best_value || self.trajectory.is_empty() {
            self.best_value = v;
            self.best_x = x.to_vec();
        }
        self.trajectory.push(self.best_value);
    }

    pub fn eval(&mut self, x: &[f64]) -> f64 {
        assert!(self.remaining() > 0, "evaluation budget exhausted");
        let v = (self.f)(x);
        self.record(x, v);
        v
    }

    pub fn eval_batch(&mut self, points: &[Vec<f64>]) -> Vec<f64> {
        assert!(points.len() <= self.remaining(), "evaluation budget exhausted");
        let values = par::map_slice(points, |p| (self.f)(p));
        for (p, &v) in points.iter().zip(&values) {
            self.record(p, v);
        }
        values
    }

    pub fn finish(self) -> OptimResult {
        OptimResult {
            evaluations: self.trajectory.len(),
            best_x: self.best_x,
            best_value: self.best_value,
            trajectory: self.trajectory,
        }
    }
}

#[cfg(test)]
pub(crate) mod planted {
    /// Concave quadratic with its maximum 0 at all-3.0.
    pub fn quadratic(x: &[f64]) -> f64 {
        -x.iter().map(|v| (v - 3.0).powi(2)).sum::<f64>()
    }

    pub fn random_start(dim: usize, seed: u64) -> Vec<f64> {
        use rand::Rng;
        let mut rng = crate::seeded_rng(seed);
        (0..dim).map(|_| rng.random_range(0.5..=5.0)).collect()
    }
}
