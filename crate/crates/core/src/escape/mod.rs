//! Can a single user widen their own recommendations by editing only their
//! ratings?
//!
//! The objective is the diversity of the user's top-k recommendations after
//! the model is refitted on the corpus with the user's ratings replaced. It
//! is a black box: every evaluation is a full model fit. Four strategies
//! attack it: finite-difference trust region, Latin-hypercube sampling, and
//! two rating-addition heuristics.

mod heuristics;
mod optim;
mod sampling;
mod trust_region;

pub use heuristics::{heuristic_far_movies, heuristic_random_movies};
pub use optim::{Bounds, OptimResult};
pub use sampling::{latin_hypercube, optimize_derivative_free, SamplingOptions};
pub use trust_region::{optimize_finite_difference, TrustRegionOptions};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Mutex;

use log::info;
use serde::{Deserialize, Serialize};

use crate::dataset::{subsample_users, MovieId, Rating, RatingTable, TagRelevanceMatrix, UserId};
use crate::diversity::{set_diversity, MovieSet};
use crate::error::{Error, Result};
use crate::recommender::{fit, Hyperparams};

/// A user's complete, editable set of ratings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RatingVector {
    entries: BTreeMap<MovieId, f64>,
}

impl RatingVector {
    pub fn new(entries: BTreeMap<MovieId, f64>) -> Result<Self> {
        Ok(RatingVector { entries })
    }

    /// The ratings `user` currently holds in `table`.
    pub fn from_table(table: &RatingTable, user: UserId) -> Self {
        RatingVector { entries: table.user_ratings(user).map(|r| (r.movie_id, r.rating)).collect() }
    }

    pub fn get(&self, movie: MovieId) -> Option<f64> {
        self.entries.get(&movie).copied()
    }

    pub fn set(&mut self, movie: MovieId, rating: f64) {
        self.entries.insert(movie, rating);
    }

    pub fn remove(&mut self, movie: MovieId) {
        self.entries.remove(&movie);
    }

    pub fn contains(&self, movie: MovieId) -> bool {
        self.entries.contains_key(&movie)
    }

    pub fn movies(&self) -> impl Iterator<Item = MovieId> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (MovieId, f64)> + '_ {
        self.entries.iter().map(|(&m, &r)| (m, r))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self, lo: f64, hi: f64) -> Result<()> {
        if let Some((m, r)) = self.iter().find(|(_, r)| !(lo..=hi).contains(r)) {
            return Err(Error::validation(format!("rating {r} for movie {m} outside [{lo}, {hi}]")));
        }
        Ok(())
    }

    fn key(&self) -> Vec<(MovieId, u64)> {
        self.iter().map(|(m, r)| (m, r.to_bits())).collect()
    }
}

/// Cheaper evaluation settings used while optimizing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Fidelity {
    pub sgd_epochs_override: Option<usize>,
    /// Keep at most this many other users in the corpus.
    pub history_subsample: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EscapeObjectiveConfig {
    pub target_user: UserId,
    pub hyper: Hyperparams,
    pub k_eval: usize,
    pub fidelity: Fidelity,
    pub seed: u64,
}

impl Default for EscapeObjectiveConfig {
    fn default() -> Self {
        EscapeObjectiveConfig {
            target_user: 1,
            hyper: Hyperparams::default(),
            k_eval: 100,
            fidelity: Fidelity::default(),
            seed: 0,
        }
    }
}

/// The recommended-diversity black box for one user. Values are memoized by
/// the exact bit pattern of the rating vector.
pub struct EscapeObjective<'a> {
    config: EscapeObjectiveConfig,
    hyper: Hyperparams,
    others: RatingTable,
    genome: &'a TagRelevanceMatrix,
    cache: Mutex<HashMap<Vec<(MovieId, u64)>, f64>>,
}

impl<'a> EscapeObjective<'a> {
    pub fn new(corpus: &RatingTable, genome: &'a TagRelevanceMatrix, config: EscapeObjectiveConfig) -> Result<Self> {
        if !corpus.contains_user(config.target_user) {
            return Err(Error::argument(format!("user {} not in corpus", config.target_user)));
        }
        if config.k_eval < 2 {
            return Err(Error::argument("k_eval must be at least 2"));
        }
        let mut others = corpus.filter(|r| r.user_id != config.target_user);
        if let Some(n) = config.fidelity.history_subsample {
            if n < others.n_users() {
                others = subsample_users(&others, n, crate::derive_seed(config.seed, 7))?.0;
            }
        }
        let mut hyper = config.hyper.clone();
        if let Some(e) = config.fidelity.sgd_epochs_override {
            hyper.n_sgd_epochs = e;
        }
        hyper.seed = crate::derive_seed(config.seed, 8);
        Ok(EscapeObjective { config, hyper, others, genome, cache: Mutex::new(HashMap::new()) })
    }

    pub fn config(&self) -> &EscapeObjectiveConfig {
        &self.config
    }

    /// The user's top-k recommendations after refitting with `x`.
    pub fn recommendations(&self, x: &RatingVector) -> Result<Vec<(MovieId, f64)>> {
        if x.is_empty() {
            return Err(Error::argument("rating vector is empty"));
        }
        x.validate(self.hyper.rating_min, self.hyper.rating_max)?;
        let user = self.config.target_user;
        let mut table = self.others.clone();
        for (m, r) in x.iter() {
            table.append(Rating::new(user, m, r, 0), 0)?;
        }
        let model = fit(&table, &self.hyper)?;
        let seen: BTreeSet<MovieId> = x.movies().collect();
        Ok(model.top_k_unseen(user, &seen, self.genome.movie_ids(), self.config.k_eval))
    }

    /// Diversity of the user's top-k recommendations under ratings `x`.
    pub fn evaluate(&self, x: &RatingVector) -> Result<f64> {
        let key = x.key();
        if let Some(&v) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(v);
        }
        let recs = self.recommendations(x)?;
        let v = set_diversity(self.genome, &MovieSet::new(recs.into_iter().map(|r| r.0).collect())?)?;
        self.cache.lock().expect("cache lock").insert(key, v);
        Ok(v)
    }
}

/// Maps a real decision vector onto a rating vector.
///
/// The first `editable.len()` coordinates are ratings of movies the user has
/// already rated, bounded to the rating range. The remaining coordinates are
/// addable slots bounded to `[0, rating_max]`: a value below `rating_min`
/// means the slot movie stays unrated. Rated movies outside `editable` keep
/// their current value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSpace {
    pub base: RatingVector,
    pub editable: Vec<MovieId>,
    pub slots: Vec<MovieId>,
    pub rating_min: f64,
    pub rating_max: f64,
}

impl DecisionSpace {
    /// Editable movies are the user's `max_rated` most recent ratings by
    /// (simulation epoch, timestamp, row) (all when `None`); slots are `n_slots` unrated genome movies
    /// drawn with `seed`.
    pub fn for_user(
        table: &RatingTable,
        genome: &TagRelevanceMatrix,
        user: UserId,
        max_rated: Option<usize>,
        n_slots: usize,
        hyper: &Hyperparams,
        seed: u64,
    ) -> Result<Self> {
        let base = RatingVector::from_table(table, user);
        let mut rows = table.user_rows(user).to_vec();
        rows.sort_by_key(|&p| (table.epochs()[p], table.rows()[p].timestamp, p));
        let take = max_rated.unwrap_or(rows.len()).min(rows.len());
        let mut editable: Vec<MovieId> = rows[rows.len() - take..].iter().map(|&p| table.rows()[p].movie_id).collect();
        editable.sort_unstable();
        let pool: Vec<MovieId> = genome.movie_ids().iter().copied().filter(|m| !base.contains(*m)).collect();
        let mut rng = crate::seeded_rng(seed);
        let mut slots: Vec<MovieId> = rand::seq::index::sample(&mut rng, pool.len(), n_slots.min(pool.len()))
            .into_iter()
            .map(|i| pool[i])
            .collect();
        slots.sort_unstable();
        Ok(DecisionSpace { base, editable, slots, rating_min: hyper.rating_min, rating_max: hyper.rating_max })
    }

    pub fn dim(&self) -> usize {
        self.editable.len() + self.slots.len()
    }

    pub fn bounds(&self) -> Bounds {
        let mut lower = vec![self.rating_min; self.editable.len()];
        lower.extend(std::iter::repeat_n(0.0, self.slots.len()));
        Bounds { lower, upper: vec![self.rating_max; self.dim()] }
    }

    /// The decision vector that reproduces `base` exactly.
    pub fn start(&self) -> Vec<f64> {
        let mut x: Vec<f64> = self.editable.iter().map(|&m| self.base.get(m).unwrap_or(self.rating_min)).collect();
        x.extend(std::iter::repeat_n(0.0, self.slots.len()));
        x
    }

    pub fn to_ratings(&self, x: &[f64]) -> RatingVector {
        let mut out = self.base.clone();
        for (&m, &v) in self.editable.iter().zip(x) {
            out.set(m, v.clamp(self.rating_min, self.rating_max));
        }
        for (&m, &v) in self.slots.iter().zip(&x[self.editable.len()..]) {
            if v >= self.rating_min {
                out.set(m, v.min(self.rating_max));
            } else {
                out.remove(m);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    FiniteDifference,
    DerivativeFree,
    HeuristicFar,
    HeuristicRandom,
}

impl Strategy {
    pub const ALL: [Strategy; 4] =
        [Strategy::FiniteDifference, Strategy::DerivativeFree, Strategy::HeuristicFar, Strategy::HeuristicRandom];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::FiniteDifference => "finite-difference",
            Strategy::DerivativeFree => "derivative-free",
            Strategy::HeuristicFar => "heuristic-far",
            Strategy::HeuristicRandom => "heuristic-random",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::argument(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EscapeStudyConfig {
    pub objective: EscapeObjectiveConfig,
    /// Editable existing ratings (most recent first); `None` for all.
    pub max_rated_vars: Option<usize>,
    pub n_slots: usize,
    pub fd_budget: usize,
    pub df_budget: usize,
    pub n_add: usize,
    pub trust_region: TrustRegionOptions,
    pub sampling: SamplingOptions,
}

impl Default for EscapeStudyConfig {
    fn default() -> Self {
        EscapeStudyConfig {
            objective: EscapeObjectiveConfig::default(),
            max_rated_vars: Some(20),
            n_slots: 10,
            fd_budget: 200,
            df_budget: 200,
            n_add: 10,
            trust_region: TrustRegionOptions::default(),
            sampling: SamplingOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorDelta {
    pub changed: usize,
    pub added: usize,
    pub removed: usize,
    /// Sum of absolute rating changes over movies rated in both vectors.
    pub l1_change: f64,
}

impl VectorDelta {
    pub fn between(from: &RatingVector, to: &RatingVector) -> Self {
        let mut d = VectorDelta { changed: 0, added: 0, removed: 0, l1_change: 0.0 };
        for (m, r) in to.iter() {
            match from.get(m) {
                Some(old) if old != r => {
                    d.changed += 1;
                    d.l1_change += (old - r).abs();
                }
                Some(_) => {}
                None => d.added += 1,
            }
        }
        d.removed = from.movies().filter(|m| !to.contains(*m)).count();
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    /// Full-fidelity value of the best vector (never below baseline).
    pub best_objective: f64,
    /// Best value seen at optimization fidelity.
    pub search_objective: f64,
    pub evaluations_used: usize,
    pub budget: usize,
    pub improvement_pct: f64,
    pub best_vector_delta: VectorDelta,
    pub verdict: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeReport {
    pub target_user: UserId,
    pub k_eval: usize,
    pub dimension: usize,
    pub baseline_objective: f64,
    pub strategies: Vec<StrategyReport>,
}

impl EscapeReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Convenience wrapper for [`EscapeObjective::evaluate`].
pub fn objective(obj: &EscapeObjective<'_>, x: &RatingVector) -> Result<f64> {
    obj.evaluate(x)
}

/// Runs the requested strategies against `corpus` for the configured target
/// user. Searches use the configured fidelity; each strategy's best vector is
/// then re-scored at full fidelity, falling back to the user's current
/// ratings if the re-score does not beat them.
pub fn run_escape_study(
    corpus: &RatingTable,
    genome: &TagRelevanceMatrix,
    config: &EscapeStudyConfig,
    strategies: &[Strategy],
) -> Result<EscapeReport> {
    let oc = &config.objective;
    let full =
        EscapeObjective::new(corpus, genome, EscapeObjectiveConfig { fidelity: Fidelity::default(), ..oc.clone() })?;
    let search = EscapeObjective::new(corpus, genome, oc.clone())?;
    let space = DecisionSpace::for_user(
        corpus,
        genome,
        oc.target_user,
        config.max_rated_vars,
        config.n_slots,
        &oc.hyper,
        crate::derive_seed(oc.seed, 3),
    )?;
    let x0 = space.base.clone();
    let baseline = full.evaluate(&x0)?;
    info!("escape baseline diversity for user {}: {baseline:.4}", oc.target_user);

    let black_box = |x: &[f64]| search.evaluate(&space.to_ratings(x)).unwrap_or(f64::NEG_INFINITY);
    let mut reports = Vec::new();
    for &strategy in strategies {
        let (best, search_value, used, budget) = match strategy {
            Strategy::FiniteDifference => {
                let r = optimize_finite_difference(
                    &black_box,
                    &space.start(),
                    &space.bounds(),
                    config.fd_budget,
                    &config.trust_region,
                )?;
                (space.to_ratings(&r.best_x), r.best_value, r.evaluations, config.fd_budget)
            }
            Strategy::DerivativeFree => {
                let opts = SamplingOptions { seed: crate::derive_seed(oc.seed, 4), ..config.sampling.clone() };
                let r = optimize_derivative_free(&black_box, &space.start(), &space.bounds(), config.df_budget, &opts)?;
                (space.to_ratings(&r.best_x), r.best_value, r.evaluations, config.df_budget)
            }
            Strategy::HeuristicFar => {
                let x = heuristic_far_movies(genome, &x0, config.n_add, oc.hyper.rating_max)?;
                let v = search.evaluate(&x)?;
                (x, v, 1, 1)
            }
            Strategy::HeuristicRandom => {
                let x = heuristic_random_movies(
                    genome,
                    &x0,
                    config.n_add,
                    oc.hyper.rating_max,
                    crate::derive_seed(oc.seed, 5),
                )?;
                let v = search.evaluate(&x)?;
                (x, v, 1, 1)
            }
        };
        let rescored = full.evaluate(&best)?;
        let (vector, value) = if rescored > baseline { (best, rescored) } else { (x0.clone(), baseline) };
        let improvement_pct = if baseline != 0.0 { 100.0 * (value - baseline) / baseline } else { 0.0 };
        let verdict = if value > baseline { "improved" } else { "no improvement" };
        info!("{}: best {value:.4} ({improvement_pct:+.2}%) after {used} evaluations", strategy.name());
        reports.push(StrategyReport {
            strategy,
            best_objective: value,
            search_objective: search_value,
            evaluations_used: used,
            budget,
            improvement_pct,
            best_vector_delta: VectorDelta::between(&x0, &vector),
            verdict: verdict.into(),
        });
    }
    Ok(EscapeReport {
        target_user: oc.target_user,
        k_eval: oc.k_eval,
        dimension: space.dim(),
        baseline_objective: baseline,
        strategies: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SyntheticConfig};

    fn corpus() -> (RatingTable, TagRelevanceMatrix) {
        let c = generate(&SyntheticConfig {
            n_movies: 40,
            n_tags: 6,
            n_users: 15,
            min_ratings: 5,
            max_ratings: 10,
            ..Default::default()
        })
        .unwrap();
        (c.ratings, c.genome)
    }

    fn cfg() -> EscapeObjectiveConfig {
        EscapeObjectiveConfig {
            target_user: 3,
            hyper: Hyperparams { n_factors: 4, n_sgd_epochs: 5, ..Hyperparams::default() },
            k_eval: 5,
            fidelity: Fidelity::default(),
            seed: 1,
        }
    }

    #[test]
    fn objective_is_deterministic_and_matches_baseline() {
        let (r, g) = corpus();
        let obj = EscapeObjective::new(&r, &g, cfg()).unwrap();
        let x = RatingVector::from_table(&r, 3);
        let a = objective(&obj, &x).unwrap();
        let fresh = EscapeObjective::new(&r, &g, cfg()).unwrap();
        assert_eq!(a, fresh.evaluate(&x).unwrap());
        assert!(a > 0.0);
        assert!(obj.evaluate(&RatingVector::default()).is_err());
    }

    #[test]
    fn decision_space_round_trips_start() {
        let (r, g) = corpus();
        let space = DecisionSpace::for_user(&r, &g, 3, Some(3), 4, &Hyperparams::default(), 0).unwrap();
        assert_eq!(space.dim(), 7);
        assert_eq!(space.to_ratings(&space.start()), space.base);
        assert!(space.bounds().contains(&space.start()));
        let mut x = space.start();
        x[3] = 4.5;
        let rv = space.to_ratings(&x);
        assert_eq!(rv.len(), space.base.len() + 1);
        assert_eq!(rv.get(space.slots[0]), Some(4.5));
    }

    #[test]
    fn editable_ratings_are_the_latest_by_time() {
        let g = TagRelevanceMatrix::new(
            vec![1, 2, 3, 4],
            vec!["a".into()],
            vec![vec![0.1], vec![0.2], vec![0.3], vec![0.4]],
        )
        .unwrap();
        // rows in movie order, timestamps say movie 1 is newest
        let mut t = RatingTable::from_ratings(vec![
            Rating::new(7, 1, 3.0, 50),
            Rating::new(7, 2, 3.0, 10),
            Rating::new(7, 3, 3.0, 20),
        ])
        .unwrap();
        let space = DecisionSpace::for_user(&t, &g, 7, Some(2), 0, &Hyperparams::default(), 0).unwrap();
        assert_eq!(space.editable, vec![1, 3]);
        t.append(Rating::new(7, 4, 4.0, 0), 1).unwrap();
        let space = DecisionSpace::for_user(&t, &g, 7, Some(2), 0, &Hyperparams::default(), 0).unwrap();
        assert_eq!(space.editable, vec![1, 4]);
    }

    #[test]
    fn planted_objective_through_the_seam() {
        let space = DecisionSpace {
            base: RatingVector::new([(1, 2.0), (2, 4.0)].into()).unwrap(),
            editable: vec![1, 2],
            slots: vec![],
            rating_min: 0.5,
            rating_max: 5.0,
        };
        let planted = |rv: &RatingVector| -rv.iter().map(|(_, r)| (r - 3.0).powi(2)).sum::<f64>();
        let f = |x: &[f64]| planted(&space.to_ratings(x));
        assert_eq!(f(&space.start()), -2.0);
        let r = optimize_finite_difference(&f, &space.start(), &space.bounds(), 100, &TrustRegionOptions::default())
            .unwrap();
        assert!(r.best_value > -1e-2);
    }

    #[test]
    fn study_reports_never_below_baseline() {
        let (r, g) = corpus();
        let config = EscapeStudyConfig {
            objective: cfg(),
            max_rated_vars: Some(3),
            n_slots: 2,
            fd_budget: 12,
            df_budget: 12,
            n_add: 2,
            ..Default::default()
        };
        let empty = run_escape_study(&r, &g, &config, &[]).unwrap();
        assert!(empty.strategies.is_empty());
        let rep = run_escape_study(&r, &g, &config, &Strategy::ALL).unwrap();
        assert_eq!(rep.baseline_objective, empty.baseline_objective);
        assert_eq!(rep.strategies.len(), 4);
        for s in &rep.strategies {
            assert!(s.best_objective >= rep.baseline_objective);
            assert!(s.evaluations_used <= s.budget);
        }
        assert_eq!(rep, run_escape_study(&r, &g, &config, &Strategy::ALL).unwrap());
    }

    #[test]
    fn strategy_names_parse() {
        for s in Strategy::ALL {
            assert_eq!(Strategy::parse(s.name()).unwrap(), s);
        }
        assert!(Strategy::parse("nope").is_err());
    }
}
