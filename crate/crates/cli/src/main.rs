//! `echosim`: runs feedback-loop simulations, SOM footprints, escape studies
//! and diversity reports, writing artifacts plus a reproducible manifest.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use serde_json::{Map, Value};

/// Bad flags, config keys or manifests. Exit code 3.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A replay that did not reproduce its recorded outputs. Exit code 4.
#[derive(Debug)]
pub struct ReplayMismatch(pub String);

impl std::fmt::Display for ReplayMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ReplayMismatch {}

#[derive(Parser, Debug)]
#[command(name = "echosim", version, about = "Closed-loop recommender diversity experiments")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, env = "ECHOSIM_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// JSON file with flat config keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding ratings.csv, genome-scores.csv, genome-tags.csv [env: ECHOSIM_DATA_DIR]
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    ratings: Option<PathBuf>,
    #[arg(long)]
    genome_scores: Option<PathBuf>,
    #[arg(long)]
    genome_tags: Option<PathBuf>,
    #[arg(long)]
    movies: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override any config key, e.g. `--set learning_rate=0.01`.
    #[arg(long = "set", value_parser = config::parse_set, value_name = "KEY=VALUE")]
    set: Vec<(String, Value)>,
    /// Output directory, or `-` for stdout where a command has one artifact.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the recommend → append → refit loop.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        history_users: Option<usize>,
        #[arg(long)]
        factors: Option<usize>,
        #[arg(long)]
        sgd_epochs: Option<usize>,
        /// Also write the post-simulation corpus.
        #[arg(long)]
        write_corpus: bool,
    },
    /// Train the tag map, group its nodes and highlight movie sets.
    Som {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        groups: Option<usize>,
        #[arg(long)]
        percentile: Option<f64>,
        /// Comma-separated movie ids to highlight.
        #[arg(long, value_delimiter = ',')]
        highlight: Option<Vec<u32>>,
        /// recs.csv from `simulate`.
        #[arg(long)]
        recs: Option<PathBuf>,
        /// Epochs of `--recs` to highlight (default: first and last).
        #[arg(long, value_delimiter = ',')]
        epochs: Option<Vec<usize>>,
    },
    /// Try to raise one user's recommendation diversity by editing their ratings.
    Escape {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        user: Option<u32>,
        /// Comma-separated: finite-difference, derivative-free, heuristic-far, heuristic-random, or none.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<String>>,
        #[arg(long)]
        fd_budget: Option<usize>,
        #[arg(long)]
        df_budget: Option<usize>,
        #[arg(long)]
        n_add: Option<usize>,
        #[arg(long)]
        k_eval: Option<usize>,
        #[arg(long)]
        sgd_epochs_override: Option<usize>,
        #[arg(long)]
        history_subsample: Option<usize>,
        /// Validate the optimizers on a planted quadratic; needs no data.
        #[arg(long)]
        self_test: bool,
    },
    /// Diversity of a movie set given as ids or a file.
    Diversity {
        #[command(flatten)]
        common: Common,
        ids: Vec<u32>,
        /// File of movie ids separated by commas or whitespace.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Parse the data files and print a summary.
    ValidateData {
        #[command(flatten)]
        common: Common,
    },
    /// Re-run a command from its manifest and compare output digests.
    Replay {
        manifest: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn put<T: serde::Serialize>(m: &mut Map<String, Value>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        m.insert(key.into(), serde_json::to_value(v).expect("plain value"));
    }
}

fn flag(m: &mut Map<String, Value>, key: &str, on: bool) {
    if on {
        m.insert(key.into(), Value::Bool(true));
    }
}

impl Common {
    fn overrides(&self) -> Map<String, Value> {
        let mut m = Map::new();
        put(&mut m, "data_dir", self.data_dir.clone());
        put(&mut m, "ratings", self.ratings.clone());
        put(&mut m, "genome_scores", self.genome_scores.clone());
        put(&mut m, "genome_tags", self.genome_tags.clone());
        put(&mut m, "movies", self.movies.clone());
        put(&mut m, "seed", self.seed);
        m
    }
}

/// Merges overrides with `--set` pairs last, loads the config and resolves data paths.
fn resolve(common: &Common, mut extra: Map<String, Value>) -> anyhow::Result<config::RunConfig> {
    let mut o = common.overrides();
    o.append(&mut extra);
    for (k, v) in &common.set {
        o.insert(k.clone(), v.clone());
    }
    let mut cfg = config::load(common.config.as_deref(), o)?;
    cfg.resolve_paths(std::env::var_os("ECHOSIM_DATA_DIR").map(PathBuf::from));
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut m = Map::new();
    match cli.command {
        Command::Simulate { common, users, k, epochs, history_users, factors, sgd_epochs, write_corpus } => {
            put(&mut m, "n_users", users);
            put(&mut m, "k", k);
            put(&mut m, "epochs", epochs);
            put(&mut m, "history_users", history_users);
            put(&mut m, "n_factors", factors);
            put(&mut m, "n_sgd_epochs", sgd_epochs);
            flag(&mut m, "write_corpus", write_corpus);
            let cfg = resolve(&common, m)?;
            commands::execute("simulate", &cfg, common.out.as_deref())
        }
        Command::Som { common, rows, cols, iterations, groups, percentile, highlight, recs, epochs } => {
            put(&mut m, "grid_rows", rows);
            put(&mut m, "grid_cols", cols);
            put(&mut m, "train_iterations", iterations);
            put(&mut m, "n_groups", groups);
            put(&mut m, "percentile", percentile);
            put(&mut m, "highlight_movies", highlight);
            put(&mut m, "highlight_recs", recs);
            put(&mut m, "highlight_epochs", epochs);
            let cfg = resolve(&common, m)?;
            commands::execute("som", &cfg, common.out.as_deref())
        }
        Command::Escape {
            common,
            user,
            strategies,
            fd_budget,
            df_budget,
            n_add,
            k_eval,
            sgd_epochs_override,
            history_subsample,
            self_test,
        } => {
            put(&mut m, "target_user", user);
            put(&mut m, "strategies", strategies);
            put(&mut m, "fd_budget", fd_budget);
            put(&mut m, "df_budget", df_budget);
            put(&mut m, "n_add", n_add);
            put(&mut m, "k_eval", k_eval);
            put(&mut m, "sgd_epochs_override", sgd_epochs_override);
            put(&mut m, "history_subsample", history_subsample);
            flag(&mut m, "self_test", self_test);
            let cfg = resolve(&common, m)?;
            commands::execute("escape", &cfg, common.out.as_deref())
        }
        Command::Diversity { common, ids, file } => {
            if !ids.is_empty() {
                put(&mut m, "diversity_ids", Some(ids));
            }
            put(&mut m, "diversity_file", file);
            let cfg = resolve(&common, m)?;
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("-"));
            commands::execute("diversity", &cfg, Some(&out))
        }
        Command::ValidateData { common } => {
            let cfg = resolve(&common, m)?;
            commands::validate_data(&cfg)
        }
        Command::Replay { manifest, out } => commands::replay(&manifest, out.as_deref()),
    }
}

/// 2 for I/O failures, 3 for invalid input or configuration, 4 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<echosim_core::Error>() {
            return match e {
                echosim_core::Error::Io(_) => 2,
                _ => 3,
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
        if cause.is::<ReplayMismatch>() {
            return 4;
        }
    }
    4
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("cannot size the thread pool: {e}");
            return ExitCode::from(4);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_cause() {
        let io: anyhow::Error = std::io::Error::new(std::io::ErrorKind::NotFound, "x").into();
        assert_eq!(exit_code(&io), 2);
        assert_eq!(exit_code(&io.context("loading")), 2);
        assert_eq!(exit_code(&UsageError("bad".into()).into()), 3);
        assert_eq!(exit_code(&echosim_core::Error::Validation("v".into()).into()), 3);
        assert_eq!(exit_code(&ReplayMismatch("m".into()).into()), 4);
        assert_eq!(exit_code(&anyhow::anyhow!("boom")), 4);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
