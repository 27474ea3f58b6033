//! Derivative-free search: Latin-hypercube batches over the whole box, then
//! shrinking-box resampling around the incumbent.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Bounds, OptimResult, Tracker};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingOptions {
    /// Share of the budget spent on global space-filling samples.
    pub global_fraction: f64,
    /// Local batch size; defaults to `max(2·dim, 10)`.
    pub batch_size: Option<usize>,
    /// Initial local half-width as a fraction of each side of the box.
    pub initial_width: f64,
    /// Width multiplier after a batch that fails to improve.
    pub shrink: f64,
    pub seed: u64,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        SamplingOptions { global_fraction: 0.25, batch_size: None, initial_width: 0.25, shrink: 0.5, seed: 0 }
    }
}

/// `n` Latin-hypercube points in the box `[lo, hi]`.
pub fn latin_hypercube<R: Rng>(rng: &mut R, n: usize, lo: &[f64], hi: &[f64]) -> Vec<Vec<f64>> {
    let d = lo.len();
    let mut points = vec![vec![0.0; d]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for k in 0..d {
        strata.shuffle(rng);
        for (p, &s) in points.iter_mut().zip(&strata) {
            let u = (s as f64 + rng.random::<f64>()) / n as f64;
            p[k] = lo[k] + u * (hi[k] - lo[k]);
        }
    }
    points
}

/// Maximizes `f` over `bounds` from `x0` within `budget` evaluations. `x0`
/// is always evaluated first so the result is never worse than the start.
pub fn optimize_derivative_free<F: Fn(&[f64]) -> f64 + Sync>(
    f: &F,
    x0: &[f64],
    bounds: &Bounds,
    budget: usize,
    opts: &SamplingOptions,
) -> Result<OptimResult> {
    bounds.check_start(x0)?;
    let d = x0.len();
    let mut t = Tracker::new(f, budget, d);
    if budget == 0 {
        return Ok(t.finish());
    }
    t.eval(x0);
    let mut rng = crate::seeded_rng(opts.seed);
    let batch = opts.batch_size.unwrap_or((2 * d).max(10)).max(1);

    let n_global = ((budget as f64 * opts.global_fraction) as usize).max(batch).min(t.remaining());
    if n_global > 0 {
        let pts = latin_hypercube(&mut rng, n_global, &bounds.lower, &bounds.upper);
        t.eval_batch(&pts);
    }

    let mut width = opts.initial_width;
    while t.remaining() > 0 {
        let n = batch.min(t.remaining());
        let center = t.best_x.clone();
        let (lo, hi): (Vec<f64>, Vec<f64>) = (0..d)
            .map(|k| {
                let half = width * (bounds.upper[k] - bounds.lower[k]);
                ((center[k] - half).max(bounds.lower[k]), (center[k] + half).min(bounds.upper[k]))
            })
            .unzip();
        let before = t.best_value;
        let pts = latin_hypercube(&mut rng, n, &lo, &hi);
        t.eval_batch(&pts);
        if !(t.best_value > before) {
            width *= opts.shrink;
        }
    }
    Ok(t.finish())
}
