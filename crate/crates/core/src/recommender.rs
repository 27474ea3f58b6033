//! Biased matrix factorization trained by stochastic gradient descent.
//!
//! Predictions follow `r̂ = μ + b_u + b_i + p_u · q_i`. Terms for users or
//! items the model has not seen are treated as zero, and predictions are
//! clamped to the rating range.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{MovieId, RatingTable, UserId, RATING_MAX, RATING_MIN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Latent dimension. Zero gives a bias-only model.
    pub n_factors: usize,
    pub n_sgd_epochs: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub rating_min: f64,
    pub rating_max: f64,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            n_factors: 100,
            n_sgd_epochs: 20,
            learning_rate: 0.005,
            regularization: 0.02,
            rating_min: RATING_MIN,
            rating_max: RATING_MAX,
            init_std: 0.1,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rating_min < self.rating_max) {
            return Err(Error::validation("rating_min must be below rating_max"));
        }
        if !(self.learning_rate > 0.0) || !(self.init_std > 0.0) || !(self.regularization >= 0.0) {
            return Err(Error::validation("learning_rate and init_std must be positive, regularization non-negative"));
        }
        Ok(())
    }
}

/// A fitted biased-MF model.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    hyper: Hyperparams,
    global_mean: f64,
    users: Vec<UserId>,
    items: Vec<MovieId>,
    user_pos: HashMap<UserId, usize>,
    item_pos: HashMap<MovieId, usize>,
    user_bias: Vec<f64>,
    item_bias: Vec<f64>,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits the model by SGD over the observed ratings.
///
/// Factors start from `N(0, init_std²)`, biases at zero, and the global mean
/// is the mean observed rating. Ratings are visited in a fresh seeded shuffle
/// each SGD epoch.
pub fn fit(ratings: &RatingTable, hyper: &Hyperparams) -> Result<FactorModel> {
    if ratings.is_empty() {
        return Err(Error::argument("cannot fit on an empty rating table"));
    }
    hyper.validate()?;
    let users: Vec<UserId> = ratings.users().collect();
    let items: Vec<MovieId> = ratings.movies().collect();
    let user_pos: HashMap<UserId, usize> = users.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let item_pos: HashMap<MovieId, usize> = items.iter().enumerate().map(|(i, &m)| (m, i)).collect();

    let obs: Vec<(usize, usize, f64)> =
        ratings.rows().iter().map(|r| (user_pos[&r.user_id], item_pos[&r.movie_id], r.rating)).collect();
    let global_mean = obs.iter().map(|o| o.2).sum::<f64>() / obs.len() as f64;

    let nf = hyper.n_factors;
    let mut rng = crate::seeded_rng(hyper.seed);
    let normal = Normal::new(0.0, hyper.init_std).map_err(|e| Error::validation(e.to_string()))?;
    let mut user_factors: Vec<f64> = (0..users.len() * nf).map(|_| normal.sample(&mut rng)).collect();
    let mut item_factors: Vec<f64> = (0..items.len() * nf).map(|_| normal.sample(&mut rng)).collect();
    let mut user_bias = vec![0.0; users.len()];
    let mut item_bias = vec![0.0; items.len()];

    let lr = hyper.learning_rate;
    let reg = hyper.regularization;
    let mut order: Vec<usize> = (0..obs.len()).collect();
    for _ in 0..hyper.n_sgd_epochs {
        order.shuffle(&mut rng);
        for &o in &order {
            let (u, i, r) = obs[o];
            let pu = &mut user_factors[u * nf..(u + 1) * nf];
            let qi = &mut item_factors[i * nf..(i + 1) * nf];
            let err = r - (global_mean + user_bias[u] + item_bias[i] + dot(pu, qi));
            user_bias[u] += lr * (err - reg * user_bias[u]);
            item_bias[i] += lr * (err - reg * item_bias[i]);
            for (puf, qif) in pu.iter_mut().zip(qi.iter_mut()) {
                let (p, q) = (*puf, *qif);
                *puf += lr * (err * q - reg * p);
                *qif += lr * (err * p - reg * q);
            }
        }
    }

    Ok(FactorModel {
        hyper: hyper.clone(),
        global_mean,
        users,
        items,
        user_pos,
        item_pos,
        user_bias,
        item_bias,
        user_factors,
        item_factors,
    })
}

impl FactorModel {
    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn global_mean(&self) -> f64 {
        self.global_mean
    }

    pub fn n_factors(&self) -> usize {
        self.hyper.n_factors
    }

    pub fn knows_user(&self, user: UserId) -> bool {
        self.user_pos.contains_key(&user)
    }

    pub fn knows_item(&self, item: MovieId) -> bool {
        self.item_pos.contains_key(&item)
    }

    pub fn user_bias(&self, user: UserId) -> Option<f64> {
        self.user_pos.get(&user).map(|&u| self.user_bias[u])
    }

    pub fn item_bias(&self, item: MovieId) -> Option<f64> {
        self.item_pos.get(&item).map(|&i| self.item_bias[i])
    }

    pub fn user_factors(&self, user: UserId) -> Option<&[f64]> {
        let nf = self.hyper.n_factors;
        self.user_pos.get(&user).map(|&u| &self.user_factors[u * nf..(u + 1) * nf])
    }

    pub fn item_factors(&self, item: MovieId) -> Option<&[f64]> {
        let nf = self.hyper.n_factors;
        self.item_pos.get(&item).map(|&i| &self.item_factors[i * nf..(i + 1) * nf])
    }

    /// Builds a model from explicit parameters. Each map entry is
    /// `(bias, factors)`; every factor vector must have `n_factors` entries.
    pub fn from_parts(
        hyper: Hyperparams,
        global_mean: f64,
        users: &[(UserId, f64, Vec<f64>)],
        items: &[(MovieId, f64, Vec<f64>)],
    ) -> Result<Self> {
        let nf = hyper.n_factors;
        if users.iter().map(|u| u.2.len()).chain(items.iter().map(|i| i.2.len())).any(|l| l != nf) {
            return Err(Error::validation(format!("factor vectors must have length {nf}")));
        }
        let user_ids: Vec<UserId> = users.iter().map(|u| u.0).collect();
        let item_ids: Vec<MovieId> = items.iter().map(|i| i.0).collect();
        let user_pos: HashMap<_, _> = user_ids.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        let item_pos: HashMap<_, _> = item_ids.iter().enumerate().map(|(i, &m)| (m, i)).collect();
        if user_pos.len() != user_ids.len() || item_pos.len() != item_ids.len() {
            return Err(Error::validation("duplicate user or item id"));
        }
        Ok(FactorModel {
            global_mean,
            user_bias: users.iter().map(|u| u.1).collect(),
            item_bias: items.iter().map(|i| i.1).collect(),
            user_factors: users.iter().flat_map(|u| u.2.iter().copied()).collect(),
            item_factors: items.iter().flat_map(|i| i.2.iter().copied()).collect(),
            users: user_ids,
            items: item_ids,
            user_pos,
            item_pos,
            hyper,
        })
    }

    /// Unclamped `μ + b_u + b_i + p_u·q_i`.
    pub fn predict_raw(&self, user: UserId, item: MovieId) -> f64 {
        let u = self.user_pos.get(&user).copied();
        let i = self.item_pos.get(&item).copied();
        self.score(u, i)
    }

    fn score(&self, u: Option<usize>, i: Option<usize>) -> f64 {
        let nf = self.hyper.n_factors;
        let mut est = self.global_mean;
        if let Some(u) = u {
            est += self.user_bias[u];
        }
        if let Some(i) = i {
            est += self.item_bias[i];
        }
        if let (Some(u), Some(i)) = (u, i) {
            est += dot(&self.user_factors[u * nf..(u + 1) * nf], &self.item_factors[i * nf..(i + 1) * nf]);
        }
        est
    }

    fn clamp(&self, est: f64) -> f64 {
        est.clamp(self.hyper.rating_min, self.hyper.rating_max)
    }

    pub fn predict(&self, user: UserId, item: MovieId) -> f64 {
        self.clamp(self.predict_raw(user, item))
    }

    /// The `k` highest-predicted candidates not in `seen`, sorted by
    /// descending prediction then ascending id.
    pub fn top_k_unseen(
        &self,
        user: UserId,
        seen: &BTreeSet<MovieId>,
        candidates: &[MovieId],
        k: usize,
    ) -> Vec<(MovieId, f64)> {
        let u = self.user_pos.get(&user).copied();
        let mut scored: Vec<(MovieId, f64)> = candidates
            .iter()
            .filter(|m| !seen.contains(m))
            .map(|&m| (m, self.clamp(self.score(u, self.item_pos.get(&m).copied()))))
            .collect();
        let by_rank = |a: &(MovieId, f64), b: &(MovieId, f64)| -> Ordering { b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)) };
        if k == 0 {
            return Vec::new();
        }
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_by(by_rank);
        scored
    }

    /// Root-mean-square error over `holdout`.
    pub fn rmse(&self, holdout: &RatingTable) -> Result<f64> {
        if holdout.is_empty() {
            return Err(Error::argument("rmse over an empty holdout"));
        }
        let sse: f64 = holdout.rows().iter().map(|r| (r.rating - self.predict(r.user_id, r.movie_id)).powi(2)).sum();
        Ok((sse / holdout.len() as f64).sqrt())
    }

    pub fn save_json<W: Write>(&self, writer: W) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            hyper: self.hyper.clone(),
            global_mean: self.global_mean,
            users: self.users.clone(),
            user_bias: self.user_bias.clone(),
            user_factors: self.user_factors.clone(),
            items: self.items.clone(),
            item_bias: self.item_bias.clone(),
            item_factors: self.item_factors.clone(),
        };
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    pub fn load_json<R: Read>(reader: R) -> Result<Self> {
        let f: ModelFile = serde_json::from_reader(reader)?;
        if f.format != MODEL_FORMAT || f.version != MODEL_VERSION {
            return Err(Error::validation(format!("unsupported model file {} v{}", f.format, f.version)));
        }
        let nf = f.hyper.n_factors;
        if f.user_bias.len() != f.users.len()
            || f.item_bias.len() != f.items.len()
            || f.user_factors.len() != f.users.len() * nf
            || f.item_factors.len() != f.items.len() * nf
        {
            return Err(Error::validation("model file has inconsistent array lengths"));
        }
        Ok(FactorModel {
            user_pos: f.users.iter().enumerate().map(|(i, &u)| (u, i)).collect(),
            item_pos: f.items.iter().enumerate().map(|(i, &m)| (m, i)).collect(),
            hyper: f.hyper,
            global_mean: f.global_mean,
            users: f.users,
            items: f.items,
            user_bias: f.user_bias,
            item_bias: f.item_bias,
            user_factors: f.user_factors,
            item_factors: f.item_factors,
        })
    }
}

const MODEL_FORMAT: &str = "echosim-factor-model";
const MODEL_VERSION: u32 = 1;

/// On-disk model layout. Factor matrices are row-major, `n_factors` wide.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    hyper: Hyperparams,
    global_mean: f64,
    users: Vec<UserId>,
    user_bias: Vec<f64>,
    user_factors: Vec<f64>,
    items: Vec<MovieId>,
    item_bias: Vec<f64>,
    item_factors: Vec<f64>,
}
