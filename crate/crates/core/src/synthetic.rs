//! Synthetic clustered corpora for tests, benches and the bundled toy data.
//!
//! Movies belong to one of several content clusters: each cluster has a
//! random tag profile and each movie perturbs it. Every user prefers one
//! cluster, rates mostly movies from it, and scores movies by their tag-space
//! distance to a personal taste vector.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{MovieId, Rating, RatingTable, TagRelevanceMatrix, RATING_MAX, RATING_MIN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_movies: usize,
    pub n_tags: usize,
    pub n_clusters: usize,
    pub n_users: usize,
    pub min_ratings: usize,
    pub max_ratings: usize,
    /// Probability that a rated movie comes from the user's own cluster.
    pub own_cluster_prob: f64,
    /// Std of a movie's tag offsets around its cluster profile.
    pub content_noise: f64,
    /// Std of a user's taste offsets around their cluster profile.
    pub taste_noise: f64,
    /// Std of the additive rating noise (stars).
    pub rating_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_movies: 500,
            n_tags: 50,
            n_clusters: 2,
            n_users: 200,
            min_ratings: 20,
            max_ratings: 40,
            own_cluster_prob: 0.8,
            content_noise: 0.15,
            taste_noise: 0.15,
            rating_noise: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub ratings: RatingTable,
    pub genome: TagRelevanceMatrix,
    /// Cluster of each movie, parallel to `genome.movie_ids()`.
    pub movie_cluster: Vec<usize>,
    /// Preferred cluster of each user, indexed by `user_id - 1`.
    pub user_cluster: Vec<usize>,
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if cfg.n_clusters == 0 || cfg.n_movies < cfg.n_clusters || cfg.n_tags == 0 {
        return Err(Error::argument("need at least one tag and one movie per cluster"));
    }
    if cfg.min_ratings > cfg.max_ratings || cfg.max_ratings > cfg.n_movies {
        return Err(Error::argument("invalid ratings-per-user range"));
    }
    let mut rng = crate::seeded_rng(cfg.seed);
    let normal = |sd: f64| Normal::new(0.0, sd).map_err(|e| Error::argument(e.to_string()));
    let content = normal(cfg.content_noise)?;
    let taste = normal(cfg.taste_noise)?;
    let noise = normal(cfg.rating_noise)?;

    let profiles: Vec<Vec<f64>> =
        (0..cfg.n_clusters).map(|_| (0..cfg.n_tags).map(|_| rng.random::<f64>()).collect()).collect();

    let movie_cluster: Vec<usize> = (0..cfg.n_movies).map(|i| i % cfg.n_clusters).collect();
    let vectors: Vec<Vec<f64>> = movie_cluster
        .iter()
        .map(|&c| profiles[c].iter().map(|p| (p + content.sample(&mut rng)).clamp(0.0, 1.0)).collect())
        .collect();
    let movie_ids: Vec<MovieId> = (1..=cfg.n_movies as MovieId).collect();
    let by_cluster: Vec<Vec<usize>> =
        (0..cfg.n_clusters).map(|c| (0..cfg.n_movies).filter(|&i| movie_cluster[i] == c).collect()).collect();

    let mut rows = Vec::new();
    let mut user_cluster = Vec::with_capacity(cfg.n_users);
    for u in 0..cfg.n_users {
        let c = rng.random_range(0..cfg.n_clusters);
        user_cluster.push(c);
        let tastes: Vec<f64> = profiles[c].iter().map(|p| p + taste.sample(&mut rng)).collect();
        let n_rated = rng.random_range(cfg.min_ratings..=cfg.max_ratings);
        let mut rated = std::collections::BTreeSet::new();
        let mut guard = 0;
        while rated.len() < n_rated && guard < 100 * cfg.n_movies {
            guard += 1;
            let pool = if cfg.n_clusters == 1 || rng.random::<f64>() < cfg.own_cluster_prob {
                &by_cluster[c]
            } else {
                let other = (c + rng.random_range(1..cfg.n_clusters)) % cfg.n_clusters;
                &by_cluster[other]
            };
            let m = pool[rng.random_range(0..pool.len())];
            if !rated.insert(m) {
                continue;
            }
            let dist = crate::diversity::squared_l2(&vectors[m], &tastes).sqrt();
            let raw = 5.5 - 1.2 * dist + noise.sample(&mut rng);
            let stars = ((raw * 2.0).round() / 2.0).clamp(RATING_MIN, RATING_MAX);
            rows.push(Rating::new(u as u32 + 1, movie_ids[m], stars, rows.len() as i64));
        }
    }

    let tag_names = (0..cfg.n_tags).map(|t| format!("tag{:03}", t + 1)).collect();
    Ok(SyntheticCorpus {
        ratings: RatingTable::from_ratings(rows)?,
        genome: TagRelevanceMatrix::new(movie_ids, tag_names, vectors)?,
        movie_cluster,
        user_cluster,
    })
}

/// Writes the corpus as MovieLens-style `ratings.csv`, `genome-scores.csv`,
/// `genome-tags.csv` and `movies.csv` under `dir`.
pub fn write_movielens(corpus: &SyntheticCorpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    corpus.ratings.write_csv(BufWriter::new(File::create(dir.join("ratings.csv"))?))?;

    let g = &corpus.genome;
    let mut tags = BufWriter::new(File::create(dir.join("genome-tags.csv"))?);
    writeln!(tags, "tagId,tag")?;
    for (t, name) in g.tag_names().iter().enumerate() {
        writeln!(tags, "{},{}", t + 1, name)?;
    }
    tags.flush()?;

    let mut scores = BufWriter::new(File::create(dir.join("genome-scores.csv"))?);
    writeln!(scores, "movieId,tagId,relevance")?;
    for (i, id) in g.movie_ids().iter().enumerate() {
        for (t, rel) in g.movie_vector(i).iter().enumerate() {
            writeln!(scores, "{id},{},{rel}", t + 1)?;
        }
    }
    scores.flush()?;

    let mut movies = BufWriter::new(File::create(dir.join("movies.csv"))?);
    writeln!(movies, "movieId,title,genres")?;
    for (i, id) in g.movie_ids().iter().enumerate() {
        writeln!(movies, "{id},Synthetic {id} (cluster {}),Drama", corpus.movie_cluster[i])?;
    }
    movies.flush()?;
    Ok(())
}
