//! Flat JSON run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use anyhow::Context;
use echosim_core::dataset::MovieId;
use echosim_core::escape::{
    EscapeObjectiveConfig, EscapeStudyConfig, Fidelity, SamplingOptions, Strategy, TrustRegionOptions,
};
use echosim_core::recommender::Hyperparams;
use echosim_core::simulator::SimConfig;
use echosim_core::somviz::SomConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::UsageError;

pub const RATINGS_FILE: &str = "ratings.csv";
pub const SCORES_FILE: &str = "genome-scores.csv";
pub const TAGS_FILE: &str = "genome-tags.csv";
pub const MOVIES_FILE: &str = "movies.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub ratings: Option<PathBuf>,
    pub genome_scores: Option<PathBuf>,
    pub genome_tags: Option<PathBuf>,
    pub movies: Option<PathBuf>,

    pub seed: u64,

    pub history_users: usize,
    pub n_users: usize,
    pub k: usize,
    pub epochs: usize,
    /// Also write the post-simulation corpus as `corpus.csv`.
    pub write_corpus: bool,

    pub n_factors: usize,
    pub n_sgd_epochs: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub init_std: f64,
    pub rating_min: f64,
    pub rating_max: f64,
    pub model_seed: u64,

    pub grid_rows: usize,
    pub grid_cols: usize,
    pub train_iterations: Option<usize>,
    pub initial_learning_rate: f64,
    pub initial_radius: Option<f64>,
    pub final_learning_rate: f64,
    pub final_radius: f64,
    pub n_groups: usize,
    pub percentile: f64,
    /// Movie set to highlight on the map.
    pub highlight_movies: Vec<MovieId>,
    /// A `recs.csv` from `simulate`; each epoch in `highlight_epochs` gets a mask.
    pub highlight_recs: Option<PathBuf>,
    pub highlight_epochs: Vec<usize>,

    pub target_user: Option<u32>,
    /// Run the optimizers on a planted quadratic instead of the recommender.
    pub self_test: bool,
    pub k_eval: usize,
    pub strategies: Vec<String>,
    pub fd_budget: usize,
    pub df_budget: usize,
    pub n_add: usize,
    pub max_rated_vars: Option<usize>,
    pub n_slots: usize,
    pub sgd_epochs_override: Option<usize>,
    pub history_subsample: Option<usize>,
    pub fd_step: f64,
    pub initial_trust_radius: f64,
    pub trust_tolerance: f64,

    pub diversity_ids: Vec<MovieId>,
    pub diversity_file: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        let h = Hyperparams::default();
        let som = SomConfig::default();
        let esc = EscapeStudyConfig::default();
        RunConfig {
            data_dir: None,
            ratings: None,
            genome_scores: None,
            genome_tags: None,
            movies: None,
            seed: 0,
            history_users: sim.history_users,
            n_users: sim.n_users,
            k: sim.k_per_epoch,
            epochs: sim.n_epochs,
            write_corpus: false,
            n_factors: h.n_factors,
            n_sgd_epochs: h.n_sgd_epochs,
            learning_rate: h.learning_rate,
            regularization: h.regularization,
            init_std: h.init_std,
            rating_min: h.rating_min,
            rating_max: h.rating_max,
            model_seed: h.seed,
            grid_rows: som.grid_rows,
            grid_cols: som.grid_cols,
            train_iterations: som.train_iterations,
            initial_learning_rate: som.initial_learning_rate,
            initial_radius: som.initial_radius,
            final_learning_rate: som.final_learning_rate,
            final_radius: som.final_radius,
            n_groups: 8,
            percentile: 80.0,
            highlight_movies: Vec::new(),
            highlight_recs: None,
            highlight_epochs: Vec::new(),
            target_user: None,
            self_test: false,
            k_eval: esc.objective.k_eval,
            strategies: Strategy::ALL.iter().map(|s| s.name().to_string()).collect(),
            fd_budget: esc.fd_budget,
            df_budget: esc.df_budget,
            n_add: esc.n_add,
            max_rated_vars: esc.max_rated_vars,
            n_slots: esc.n_slots,
            sgd_epochs_override: None,
            history_subsample: None,
            fd_step: esc.trust_region.fd_step,
            initial_trust_radius: esc.trust_region.initial_radius,
            trust_tolerance: esc.trust_region.tolerance,
            diversity_ids: Vec::new(),
            diversity_file: None,
        }
    }
}

/// Loads `path` (if any) and applies `overrides` on top, key by key.
pub fn load(path: Option<&Path>, overrides: Map<String, Value>) -> anyhow::Result<RunConfig> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(UsageError(format!("config {} must be a JSON object", p.display())).into()),
                Err(e) => return Err(UsageError(format!("config {}: {e}", p.display())).into()),
            }
        }
        None => Map::new(),
    };
    doc.extend(overrides);
    serde_json::from_value(Value::Object(doc)).map_err(|e| UsageError(format!("config: {e}")).into())
}

/// Parses `key=value`; the value is read as JSON, falling back to a string.
pub fn parse_set(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl RunConfig {
    /// Fills the individual data-file keys from `data_dir` where unset.
    pub fn resolve_paths(&mut self, env_data_dir: Option<PathBuf>) {
        if self.data_dir.is_none() {
            self.data_dir = env_data_dir;
        }
        let Some(dir) = self.data_dir.clone() else { return };
        let fill = |slot: &mut Option<PathBuf>, name: &str| {
            if slot.is_none() {
                *slot = Some(dir.join(name));
            }
        };
        fill(&mut self.ratings, RATINGS_FILE);
        fill(&mut self.genome_scores, SCORES_FILE);
        fill(&mut self.genome_tags, TAGS_FILE);
        let movies = dir.join(MOVIES_FILE);
        if self.movies.is_none() && movies.exists() {
            self.movies = Some(movies);
        }
    }

    pub fn hyper(&self) -> Hyperparams {
        Hyperparams {
            n_factors: self.n_factors,
            n_sgd_epochs: self.n_sgd_epochs,
            learning_rate: self.learning_rate,
            regularization: self.regularization,
            rating_min: self.rating_min,
            rating_max: self.rating_max,
            init_std: self.init_std,
            seed: self.model_seed,
        }
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            n_users: self.n_users,
            k_per_epoch: self.k,
            n_epochs: self.epochs,
            history_users: self.history_users,
            hyper: self.hyper(),
            seed: self.seed,
        }
    }

    pub fn som(&self) -> SomConfig {
        SomConfig {
            grid_rows: self.grid_rows,
            grid_cols: self.grid_cols,
            train_iterations: self.train_iterations,
            initial_learning_rate: self.initial_learning_rate,
            initial_radius: self.initial_radius,
            final_learning_rate: self.final_learning_rate,
            final_radius: self.final_radius,
            seed: self.seed,
        }
    }

    pub fn escape(&self) -> anyhow::Result<EscapeStudyConfig> {
        let target_user = self.target_user.ok_or_else(|| UsageError("escape needs target_user (--user)".into()))?;
        Ok(EscapeStudyConfig {
            objective: EscapeObjectiveConfig {
                target_user,
                hyper: self.hyper(),
                k_eval: self.k_eval,
                fidelity: Fidelity {
                    sgd_epochs_override: self.sgd_epochs_override,
                    history_subsample: self.history_subsample,
                },
                seed: self.seed,
            },
            max_rated_vars: self.max_rated_vars,
            n_slots: self.n_slots,
            fd_budget: self.fd_budget,
            df_budget: self.df_budget,
            n_add: self.n_add,
            trust_region: self.escape_trust_region(),
            sampling: SamplingOptions { seed: self.seed, ..SamplingOptions::default() },
        })
    }

    pub fn escape_trust_region(&self) -> TrustRegionOptions {
        TrustRegionOptions {
            fd_step: self.fd_step,
            initial_radius: self.initial_trust_radius,
            tolerance: self.trust_tolerance,
            ..TrustRegionOptions::default()
        }
    }

    /// `none` selects no strategy.
    pub fn strategy_list(&self) -> anyhow::Result<Vec<Strategy>> {
        if self.strategies.iter().any(|s| s == "none") {
            return Ok(Vec::new());
        }
        self.strategies.iter().map(|s| Strategy::parse(s).map_err(|e| UsageError(e.to_string()).into())).collect()
    }
}
