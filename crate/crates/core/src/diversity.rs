//! Content distance and set diversity in tag space.

use std::collections::BTreeSet;

use crate::dataset::{MovieId, TagRelevanceMatrix};
use crate::error::{Error, Result};
use crate::par;

/// An ordered set of distinct movies, all present in a genome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MovieSet {
    ids: Vec<MovieId>,
}

impl MovieSet {
    pub fn new(ids: Vec<MovieId>) -> Result<Self> {
        let distinct: BTreeSet<_> = ids.iter().collect();
        if distinct.len() != ids.len() {
            return Err(Error::argument("movie set contains duplicates"));
        }
        Ok(MovieSet { ids })
    }

    pub fn ids(&self) -> &[MovieId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Squared L2 distance between two equal-length vectors.
#[inline]
pub fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn position(genome: &TagRelevanceMatrix, movie: MovieId) -> Result<usize> {
    genome.index_of(movie).ok_or_else(|| Error::argument(format!("movie {movie} not in genome")))
}

/// Euclidean distance between two movies' tag vectors.
pub fn tag_distance(genome: &TagRelevanceMatrix, i: MovieId, j: MovieId) -> Result<f64> {
    let (a, b) = (position(genome, i)?, position(genome, j)?);
    Ok(squared_l2(genome.movie_vector(a), genome.movie_vector(b)).sqrt())
}

/// `2!(n−2)!/n!`, the normalizer over the `C(n, 2)` unordered pairs.
pub fn pair_prefactor(n: usize) -> f64 {
    2.0 / (n as f64 * (n as f64 - 1.0))
}

/// Mean pairwise tag distance over all unordered pairs of `m`.
///
/// Per-row partial sums are computed in parallel and then added in row
/// order, so the result does not depend on thread count.
pub fn set_diversity(genome: &TagRelevanceMatrix, m: &MovieSet) -> Result<f64> {
    let n = m.len();
    if n < 2 {
        return Err(Error::argument(format!("diversity needs at least 2 movies, got {n}")));
    }
    let pos: Vec<usize> = m.ids().iter().map(|&id| position(genome, id)).collect::<Result<_>>()?;
    let row_sum = |i: usize| -> f64 {
        let a = genome.movie_vector(pos[i]);
        pos[i + 1..].iter().map(|&p| squared_l2(a, genome.movie_vector(p)).sqrt()).sum()
    };
    let rows: Vec<f64> = if n >= 64 { par::map_range(n - 1, row_sum) } else { (0..n - 1).map(row_sum).collect() };
    Ok(pair_prefactor(n) * rows.iter().sum::<f64>())
}

/// The closest pair of movies: `(id_a, id_b, distance)` with `id_a < id_b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarPair {
    pub first: MovieId,
    pub second: MovieId,
    pub distance: f64,
}

fn ordered_pair(genome: &TagRelevanceMatrix, a: usize, b: usize, d2: f64) -> (MovieId, MovieId, f64) {
    let (x, y) = (genome.movie_ids()[a], genome.movie_ids()[b]);
    (x.min(y), x.max(y), d2)
}

/// Whether candidate `c` beats incumbent `best` under (distance, id_a, id_b).
fn better(c: (MovieId, MovieId, f64), best: Option<(MovieId, MovieId, f64)>) -> bool {
    match best {
        None => true,
        Some(b) => c.2 < b.2 || (c.2 == b.2 && (c.0, c.1) < (b.0, b.1)),
    }
}

/// Minimum-distance pair by exhaustive scan.
///
/// Each row is scanned in parallel with partial-distance pruning: a candidate
/// is abandoned once its running sum of squares strictly exceeds the row's
/// current best, which cannot change the result. Rows are merged in order.
pub fn most_similar_pair(genome: &TagRelevanceMatrix) -> Result<SimilarPair> {
    let m = genome.n_movies();
    if m < 2 {
        return Err(Error::argument("need at least 2 movies"));
    }
    let row_best = |i: usize| -> Option<(MovieId, MovieId, f64)> {
        let a = genome.movie_vector(i);
        let mut best: Option<(MovieId, MovieId, f64)> = None;
        for j in i + 1..m {
            let b = genome.movie_vector(j);
            let bound = best.map_or(f64::INFINITY, |b| b.2);
            let mut acc = 0.0;
            let mut pruned = false;
            for (chunk_a, chunk_b) in a.chunks(32).zip(b.chunks(32)) {
                acc += squared_l2(chunk_a, chunk_b);
                if acc > bound {
                    pruned = true;
                    break;
                }
            }
            if !pruned {
                let c = ordered_pair(genome, i, j, acc);
                if better(c, best) {
                    best = Some(c);
                }
            }
        }
        best
    };
    let rows = par::map_range(m - 1, row_best);
    let mut best = None;
    for c in rows.into_iter().flatten() {
        if better(c, best) {
            best = Some(c);
        }
    }
    let (first, second, d2) = best.expect("at least one pair");
    Ok(SimilarPair { first, second, distance: d2.sqrt() })
}

/// Reference O(M²·N) scan without pruning or parallelism.
pub fn most_similar_pair_naive(genome: &TagRelevanceMatrix) -> Result<SimilarPair> {
    let m = genome.n_movies();
    if m < 2 {
        return Err(Error::argument("need at least 2 movies"));
    }
    let mut best = None;
    for i in 0..m {
        for j in i + 1..m {
            let mut acc = 0.0;
            for (ca, cb) in genome.movie_vector(i).chunks(32).zip(genome.movie_vector(j).chunks(32)) {
                acc += squared_l2(ca, cb);
            }
            let c = ordered_pair(genome, i, j, acc);
            if better(c, best) {
                best = Some(c);
            }
        }
    }
    let (first, second, d2) = best.expect("at least one pair");
    Ok(SimilarPair { first, second, distance: d2.sqrt() })
}

/// Sample mean and standard error of the mean (sample std / √n).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeanSem {
    pub mean: f64,
    pub sem: f64,
}

pub fn mean_diversity(values: &[f64]) -> Result<MeanSem> {
    let n = values.len();
    if n < 2 {
        return Err(Error::argument(format!("need at least 2 values, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(MeanSem { mean, sem: (var / n as f64).sqrt() })
}
