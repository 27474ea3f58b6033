//! Subcommand bodies. Each produces named in-memory artifacts; `execute`
//! writes them next to a manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use echosim_core::dataset::{
    filter_to_tagged, parse_genome, parse_movie_titles, parse_ratings, MovieId, ParsedGenome, RatingTable,
};
use echosim_core::diversity::{set_diversity, tag_distance, MovieSet};
use echosim_core::escape::{
    latin_hypercube, optimize_derivative_free, optimize_finite_difference, run_escape_study, Bounds, SamplingOptions,
};
use echosim_core::simulator::{run_simulation_with_state, write_recs_csv, write_summary_csv, write_trace_csv};
use echosim_core::somviz::{
    cluster_nodes, export_som, highlight_nodes_with, train_som, write_highlights_csv, HighlightMask, TagThresholds,
};
use log::{info, warn};
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::{sha256_hex, FileDigest, RunManifest, Timings, MANIFEST_FILE};
use crate::{ReplayMismatch, UsageError};

type Artifacts = Vec<(String, Vec<u8>)>;

/// Reads input files, remembering their digests for the manifest.
#[derive(Default)]
struct Inputs {
    digests: Vec<FileDigest>,
}

impl Inputs {
    fn read(&mut self, path: &Path) -> anyhow::Result<Vec<u8>> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.digests.push(FileDigest::of(path, &bytes));
        Ok(bytes)
    }

    fn ratings(&mut self, cfg: &RunConfig) -> anyhow::Result<RatingTable> {
        let path = required(&cfg.ratings, "ratings")?;
        let bytes = self.read(path)?;
        parse_ratings(bytes.as_slice(), true).with_context(|| format!("parsing {}", path.display()))
    }

    fn genome(&mut self, cfg: &RunConfig) -> anyhow::Result<ParsedGenome> {
        let scores_path = required(&cfg.genome_scores, "genome_scores")?;
        let tags_path = required(&cfg.genome_tags, "genome_tags")?;
        let scores = self.read(scores_path)?;
        let tags = self.read(tags_path)?;
        let parsed = parse_genome(scores.as_slice(), tags.as_slice()).context("parsing the tag genome")?;
        if parsed.excluded_movies > 0 {
            warn!("{} movies lack a full set of tag scores and were dropped", parsed.excluded_movies);
        }
        Ok(parsed)
    }
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> anyhow::Result<&'a Path> {
    p.as_deref().ok_or_else(|| {
        UsageError(format!("no `{key}` file configured; pass --data-dir or --{}", key.replace('_', "-"))).into()
    })
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> echosim_core::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(v: &T) -> anyhow::Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn simulate(cfg: &RunConfig, inputs: &mut Inputs, t: &mut Timings) -> anyhow::Result<Artifacts> {
    let start = Instant::now();
    let ratings = inputs.ratings(cfg)?;
    let genome = inputs.genome(cfg)?.genome;
    t.load_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let (trace, state) = run_simulation_with_state(&ratings, &genome, &cfg.sim())?;
    t.run_seconds = start.elapsed().as_secs_f64();

    let mut out = vec![
        ("trace.csv".to_string(), csv_bytes(|b| write_trace_csv(&trace, b))?),
        ("summary.csv".to_string(), csv_bytes(|b| write_summary_csv(&trace, b))?),
        ("recs.csv".to_string(), csv_bytes(|b| write_recs_csv(&trace, b))?),
    ];
    if cfg.write_corpus {
        out.push(("corpus.csv".to_string(), csv_bytes(|b| state.table.write_csv(b))?));
    }
    Ok(out)
}

/// Movies recommended in each epoch of a `recs.csv`.
fn recs_by_epoch(bytes: &[u8], path: &Path) -> anyhow::Result<BTreeMap<usize, BTreeSet<MovieId>>> {
    let text = std::str::from_utf8(bytes).map_err(|_| UsageError(format!("{} is not UTF-8", path.display())))?;
    let mut out: BTreeMap<usize, BTreeSet<MovieId>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad =
            || UsageError(format!("{}:{}: expected epoch,user_id,movie_id,predicted_rating", path.display(), i + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad().into());
        }
        let epoch: usize = f[0].trim().parse().map_err(|_| bad())?;
        let movie: MovieId = f[2].trim().parse().map_err(|_| bad())?;
        out.entry(epoch).or_default().insert(movie);
    }
    Ok(out)
}

fn som(cfg: &RunConfig, inputs: &mut Inputs, t: &mut Timings) -> anyhow::Result<Artifacts> {
    let start = Instant::now();
    let genome = inputs.genome(cfg)?.genome;
    let recs = match &cfg.highlight_recs {
        Some(p) => Some(recs_by_epoch(&inputs.read(p)?, p)?),
        None => None,
    };
    t.load_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let mut map = train_som(&genome, &cfg.som())?;
    let groups = cluster_nodes(&map, cfg.n_groups)?;
    map.set_node_groups(groups)?;

    let thresholds = TagThresholds::new(&genome, cfg.percentile)?;
    let mut masks: Vec<(usize, HighlightMask)> = Vec::new();
    if !cfg.highlight_movies.is_empty() {
        let set = MovieSet::new(cfg.highlight_movies.clone())?;
        masks.push((0, highlight_nodes_with(&map, &genome, &set, &thresholds)?));
    }
    if let Some(by_epoch) = &recs {
        let epochs: Vec<usize> = if cfg.highlight_epochs.is_empty() {
            by_epoch
                .keys()
                .next()
                .into_iter()
                .chain(by_epoch.keys().next_back())
                .copied()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        } else {
            cfg.highlight_epochs.clone()
        };
        for e in epochs {
            let movies = by_epoch
                .get(&e)
                .ok_or_else(|| UsageError(format!("epoch {e} not present in the recommendations file")))?;
            let set = MovieSet::new(movies.iter().copied().collect())?;
            masks.push((e, highlight_nodes_with(&map, &genome, &set, &thresholds)?));
        }
    }
    t.run_seconds = start.elapsed().as_secs_f64();

    // a single mask is embedded in the map export; several go to highlights.csv only
    let embedded = if masks.len() == 1 { Some(&masks[0].1) } else { None };
    let doc = export_som(&map, &genome, embedded);
    let mut out = vec![("som.json".to_string(), doc.to_json()?.into_bytes())];
    if !masks.is_empty() {
        out.push(("highlights.csv".to_string(), csv_bytes(|b| write_highlights_csv(&map, &masks, b))?));
    }
    Ok(out)
}

#[derive(Serialize)]
struct SelfTestEntry {
    optimizer: &'static str,
    dimension: usize,
    budget: usize,
    evaluations: usize,
    best_value: f64,
    optimum_value: f64,
    gap: f64,
    tolerance: f64,
    pass: bool,
}

/// Both optimizers against `−Σ(xᵢ − 3)²` on `[0.5, 5]^5` from a seeded start.
fn self_test(cfg: &RunConfig) -> anyhow::Result<Artifacts> {
    let dim = 5;
    let planted = |x: &[f64]| -x.iter().map(|v| (v - 3.0).powi(2)).sum::<f64>();
    let bounds = Bounds::uniform(dim, 0.5, 5.0);
    let mut rng = echosim_core::seeded_rng(cfg.seed);
    let x0 = latin_hypercube(&mut rng, 1, &bounds.lower, &bounds.upper).remove(0);
    let fd_budget = 500 * dim;
    let fd = optimize_finite_difference(&planted, &x0, &bounds, fd_budget, &cfg.escape_trust_region())?;
    let df_budget = 2000;
    let df = optimize_derivative_free(
        &planted,
        &x0,
        &bounds,
        df_budget,
        &SamplingOptions { seed: cfg.seed, ..Default::default() },
    )?;
    let entry = |optimizer, budget, r: &echosim_core::escape::OptimResult, tolerance: f64| SelfTestEntry {
        optimizer,
        dimension: dim,
        budget,
        evaluations: r.evaluations,
        best_value: r.best_value,
        optimum_value: 0.0,
        gap: -r.best_value,
        tolerance,
        pass: -r.best_value <= tolerance,
    };
    let report = vec![entry("finite-difference", fd_budget, &fd, 1e-2), entry("derivative-free", df_budget, &df, 5e-2)];
    for e in &report {
        info!(
            "{}: gap {:.3e} (tolerance {:.0e}) {}",
            e.optimizer,
            e.gap,
            e.tolerance,
            if e.pass { "pass" } else { "FAIL" }
        );
    }
    Ok(vec![("optimizer_selftest.json".to_string(), json_bytes(&report)?)])
}

fn escape(cfg: &RunConfig, inputs: &mut Inputs, t: &mut Timings) -> anyhow::Result<Artifacts> {
    if cfg.self_test {
        let start = Instant::now();
        let out = self_test(cfg)?;
        t.run_seconds = start.elapsed().as_secs_f64();
        return Ok(out);
    }
    let study = cfg.escape()?;
    let strategies = cfg.strategy_list()?;
    let start = Instant::now();
    let genome = inputs.genome(cfg)?.genome;
    let ratings = filter_to_tagged(&inputs.ratings(cfg)?, &genome);
    t.load_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let report = run_escape_study(&ratings, &genome, &study, &strategies)?;
    t.run_seconds = start.elapsed().as_secs_f64();
    Ok(vec![("escape_report.json".to_string(), format!("{}\n", report.to_json()?).into_bytes())])
}

fn read_ids(bytes: &[u8], path: &Path) -> anyhow::Result<Vec<MovieId>> {
    let text = std::str::from_utf8(bytes).map_err(|_| UsageError(format!("{} is not UTF-8", path.display())))?;
    text.lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(|l| l.split(|c: char| c == ',' || c.is_whitespace()))
        .filter(|tok| !tok.is_empty())
        .map(|tok| tok.parse().map_err(|_| UsageError(format!("{}: `{tok}` is not a movie id", path.display())).into()))
        .collect()
}

fn diversity(cfg: &RunConfig, inputs: &mut Inputs, t: &mut Timings) -> anyhow::Result<Artifacts> {
    let start = Instant::now();
    let genome = inputs.genome(cfg)?.genome;
    let mut ids = cfg.diversity_ids.clone();
    if let Some(p) = &cfg.diversity_file {
        ids.extend(read_ids(&inputs.read(p)?, p)?);
    }
    t.load_seconds = start.elapsed().as_secs_f64();
    if ids.len() < 2 {
        return Err(UsageError("diversity needs at least two movie ids".into()).into());
    }

    let start = Instant::now();
    let set = MovieSet::new(ids.clone())?;
    let d = set_diversity(&genome, &set)?;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for (a, &i) in ids.iter().enumerate() {
        for &j in &ids[a + 1..] {
            let x = tag_distance(&genome, i, j)?;
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    t.run_seconds = start.elapsed().as_secs_f64();
    let joined: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
    let body = format!(
        "movies,n_movies,diversity,min_distance,max_distance\n{},{},{d},{lo},{hi}\n",
        joined.join(" "),
        ids.len()
    );
    Ok(vec![("diversity.csv".to_string(), body.into_bytes())])
}

fn run_named(command: &str, cfg: &RunConfig, inputs: &mut Inputs, t: &mut Timings) -> anyhow::Result<Artifacts> {
    match command {
        "simulate" => simulate(cfg, inputs, t),
        "som" => som(cfg, inputs, t),
        "escape" => escape(cfg, inputs, t),
        "diversity" => diversity(cfg, inputs, t),
        other => Err(UsageError(format!("unknown command `{other}`")).into()),
    }
}

fn absolutize(p: &mut Option<PathBuf>) -> anyhow::Result<()> {
    if let Some(path) = p {
        *path = std::path::absolute(&*path).with_context(|| format!("resolving {}", path.display()))?;
    }
    Ok(())
}

/// Runs `command` and writes its artifacts plus `manifest.json` into `out`
/// (default `.`). `-` streams a single artifact to stdout without a manifest.
pub fn execute(command: &str, cfg: &RunConfig, out: Option<&Path>) -> anyhow::Result<()> {
    let mut cfg = cfg.clone();
    for p in [
        &mut cfg.data_dir,
        &mut cfg.ratings,
        &mut cfg.genome_scores,
        &mut cfg.genome_tags,
        &mut cfg.movies,
        &mut cfg.highlight_recs,
        &mut cfg.diversity_file,
    ] {
        absolutize(p)?;
    }
    let manifest = produce(command, &cfg, out.unwrap_or(Path::new(".")))?;
    if let Some(m) = manifest {
        info!("{command}: wrote {} artifacts", m.outputs.len());
    }
    Ok(())
}

fn produce(command: &str, cfg: &RunConfig, out: &Path) -> anyhow::Result<Option<RunManifest>> {
    let mut inputs = Inputs::default();
    let mut manifest = RunManifest::new(command, cfg);
    let artifacts = run_named(command, cfg, &mut inputs, &mut manifest.timings)?;
    manifest.inputs = inputs.digests;

    if out == Path::new("-") {
        if artifacts.len() != 1 {
            return Err(
                UsageError(format!("{command} writes {} files; give --out a directory", artifacts.len())).into()
            );
        }
        let mut stdout = std::io::stdout().lock();
        stdout.write_all(&artifacts[0].1)?;
        stdout.flush()?;
        return Ok(None);
    }

    let start = Instant::now();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, bytes) in &artifacts {
        let path = out.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        manifest.outputs.push(FileDigest::of(Path::new(name), bytes));
    }
    manifest.timings.write_seconds = start.elapsed().as_secs_f64();
    let path = out.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_json()?).with_context(|| format!("writing {}", path.display()))?;
    Ok(Some(manifest))
}

/// Re-runs a manifest into `out` (default `<manifest dir>/replay`) and
/// checks inputs and outputs against the recorded digests.
pub fn replay(manifest_path: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let recorded = RunManifest::read(manifest_path)?;
    for input in &recorded.inputs {
        let bytes = std::fs::read(&input.path).with_context(|| format!("reading {}", input.path.display()))?;
        if sha256_hex(&bytes) != input.sha256 {
            return Err(UsageError(format!("input {} changed since the recorded run", input.path.display())).into());
        }
    }
    let default_out = manifest_path.parent().unwrap_or(Path::new(".")).join("replay");
    let out = out.unwrap_or(&default_out);
    if out == Path::new("-") {
        return Err(UsageError("replay needs an output directory".into()).into());
    }
    let fresh = produce(&recorded.command, &recorded.config, out)?.expect("directory output has a manifest");
    let want: BTreeMap<_, _> = recorded.outputs.iter().map(|d| (&d.path, &d.sha256)).collect();
    let got: BTreeMap<_, _> = fresh.outputs.iter().map(|d| (&d.path, &d.sha256)).collect();
    if want != got {
        let differing: Vec<String> = want
            .keys()
            .chain(got.keys())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .filter(|k| want.get(*k) != got.get(*k))
            .map(|k| k.display().to_string())
            .collect();
        return Err(ReplayMismatch(format!("replay differs in: {}", differing.join(", "))).into());
    }
    info!("replay reproduced {} artifacts byte-for-byte", got.len());
    Ok(())
}

#[derive(Serialize)]
struct DataSummary {
    ratings: Option<RatingsSummary>,
    genome: Option<GenomeSummary>,
    titles: Option<usize>,
}

#[derive(Serialize)]
struct RatingsSummary {
    rows: usize,
    users: usize,
    movies: usize,
    rows_with_tagged_movie: Option<usize>,
}

#[derive(Serialize)]
struct GenomeSummary {
    movies: usize,
    tags: usize,
    excluded_movies: usize,
}

/// Parses whatever data files are configured and prints a JSON summary.
pub fn validate_data(cfg: &RunConfig) -> anyhow::Result<()> {
    if cfg.ratings.is_none() && cfg.genome_scores.is_none() && cfg.movies.is_none() {
        return Err(UsageError("no data configured; pass --data-dir or individual file flags".into()).into());
    }
    let mut inputs = Inputs::default();
    let genome =
        if cfg.genome_scores.is_some() || cfg.genome_tags.is_some() { Some(inputs.genome(cfg)?) } else { None };
    let ratings = match cfg.ratings {
        Some(_) => Some(inputs.ratings(cfg)?),
        None => None,
    };
    let titles = match &cfg.movies {
        Some(p) => Some(
            parse_movie_titles(inputs.read(p)?.as_slice()).with_context(|| format!("parsing {}", p.display()))?.len(),
        ),
        None => None,
    };
    let summary = DataSummary {
        ratings: ratings.as_ref().map(|r| RatingsSummary {
            rows: r.len(),
            users: r.n_users(),
            movies: r.n_movies(),
            rows_with_tagged_movie: genome.as_ref().map(|g| filter_to_tagged(r, &g.genome).len()),
        }),
        genome: genome.as_ref().map(|g| GenomeSummary {
            movies: g.genome.n_movies(),
            tags: g.genome.n_tags(),
            excluded_movies: g.excluded_movies,
        }),
        titles,
    };
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(&json_bytes(&summary)?)?;
    Ok(())
}
