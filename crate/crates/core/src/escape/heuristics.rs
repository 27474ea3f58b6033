//! Rating-addition heuristics: rate the movies farthest from the user's
//! history, or random unrated movies, at the top of the scale.

use log::warn;
use rand::seq::index;

use super::RatingVector;
use crate::dataset::{MovieId, TagRelevanceMatrix};
use crate::diversity::squared_l2;
use crate::error::{Error, Result};
use crate::par;

fn unrated_pool(genome: &TagRelevanceMatrix, x0: &RatingVector) -> Vec<MovieId> {
    genome.movie_ids().iter().copied().filter(|m| !x0.contains(*m)).collect()
}

/// Adds `high` for the `n_add` unrated movies with the largest mean tag
/// distance to the user's rated movies (ties by ascending id).
pub fn heuristic_far_movies(
    genome: &TagRelevanceMatrix,
    x0: &RatingVector,
    n_add: usize,
    high: f64,
) -> Result<RatingVector> {
    if n_add == 0 {
        return Err(Error::argument("n_add must be at least 1"));
    }
    let pool = unrated_pool(genome, x0);
    if pool.is_empty() {
        return Err(Error::argument("user has no unrated movies left"));
    }
    if n_add > pool.len() {
        warn!("n_add {n_add} exceeds the {} unrated movies; adding all", pool.len());
    }
    let history: Vec<usize> = x0.movies().filter_map(|m| genome.index_of(m)).collect();
    if history.is_empty() {
        return Err(Error::argument("user has no rated movies in the genome"));
    }
    let mean_dist = par::map_slice(&pool, |&m| {
        let v = genome.movie_vector(genome.index_of(m).expect("pool drawn from genome"));
        history.iter().map(|&h| squared_l2(v, genome.movie_vector(h)).sqrt()).sum::<f64>() / history.len() as f64
    });
    let mut ranked: Vec<(MovieId, f64)> = pool.into_iter().zip(mean_dist).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out = x0.clone();
    for (m, _) in ranked.into_iter().take(n_add) {
        out.set(m, high);
    }
    Ok(out)
}

/// Adds `high` for `n_add` unrated movies drawn uniformly with `seed`.
pub fn heuristic_random_movies(
    genome: &TagRelevanceMatrix,
    x0: &RatingVector,
    n_add: usize,
    high: f64,
    seed: u64,
) -> Result<RatingVector> {
    if n_add == 0 {
        return Ok(x0.clone());
    }
    let pool = unrated_pool(genome, x0);
    if pool.is_empty() {
        return Err(Error::argument("user has no unrated movies left"));
    }
    if n_add > pool.len() {
        warn!("n_add {n_add} exceeds the {} unrated movies; adding all", pool.len());
    }
    let mut rng = crate::seeded_rng(seed);
    let mut out = x0.clone();
    for i in index::sample(&mut rng, pool.len(), n_add.min(pool.len())) {
        out.set(pool[i], high);
    }
    Ok(out)
}
