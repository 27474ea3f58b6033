//! The closed feedback loop: fit, recommend `k` unseen movies to every
//! sampled user, append those recommendations as accepted ratings at exactly
//! the predicted value, refit, and repeat.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    filter_to_tagged, subsample_users, MovieId, Rating, RatingTable, TagRelevanceMatrix, UserId, UserSample,
};
use crate::diversity::{mean_diversity, set_diversity, MeanSem, MovieSet};
use crate::error::{Error, Result};
use crate::par;
use crate::recommender::{fit, FactorModel, Hyperparams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_users: usize,
    pub k_per_epoch: usize,
    pub n_epochs: usize,
    pub history_users: usize,
    pub hyper: Hyperparams,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_users: 100,
            k_per_epoch: 100,
            n_epochs: 40,
            history_users: 1000,
            hyper: Hyperparams::default(),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.k_per_epoch == 0 || self.n_epochs == 0 || self.history_users == 0 {
            return Err(Error::validation("simulation counts must all be at least 1"));
        }
        if self.n_users > self.history_users {
            return Err(Error::validation(format!(
                "n_users ({}) exceeds history_users ({})",
                self.n_users, self.history_users
            )));
        }
        self.hyper.validate()
    }
}

/// One epoch of the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Diversity of each active user's recommendations this epoch.
    pub per_user: Vec<(UserId, f64)>,
    /// Aggregate over `per_user`; `None` when fewer than two users were scored.
    pub stats: Option<MeanSem>,
    pub recommendations: Vec<(UserId, Vec<(MovieId, f64)>)>,
    /// Users who exhausted the candidate pool during this epoch.
    pub newly_frozen: Vec<UserId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityTrace {
    pub baseline: MeanSem,
    pub sample: UserSample,
    pub per_epoch: Vec<EpochRecord>,
}

/// Mutable loop state between epochs.
#[derive(Debug, Clone)]
pub struct SimState {
    pub table: RatingTable,
    pub model: FactorModel,
    pub users: Vec<UserId>,
    pub seen: BTreeMap<UserId, BTreeSet<MovieId>>,
    pub frozen: BTreeSet<UserId>,
}

impl SimState {
    pub fn new(table: RatingTable, model: FactorModel, users: Vec<UserId>) -> Self {
        let seen = users.iter().map(|&u| (u, table.user_movies(u))).collect();
        SimState { table, model, users, seen, frozen: BTreeSet::new() }
    }
}

/// Mean diversity of the sampled users' rating histories before any
/// recommendation is served. Users with fewer than two tagged movies are
/// skipped.
pub fn baseline_diversity(ratings: &RatingTable, sample: &UserSample, genome: &TagRelevanceMatrix) -> Result<MeanSem> {
    let per_user = par::map_slice(&sample.user_ids, |&u| {
        let movies: Vec<MovieId> = ratings.user_movies(u).into_iter().filter(|m| genome.contains(*m)).collect();
        if movies.len() < 2 {
            return Ok(None);
        }
        set_diversity(genome, &MovieSet::new(movies)?).map(Some)
    });
    let mut values = Vec::with_capacity(per_user.len());
    for (u, d) in sample.user_ids.iter().zip(per_user) {
        match d? {
            Some(d) => values.push(d),
            None => warn!("user {u} has fewer than 2 tagged ratings; excluded from baseline"),
        }
    }
    if values.is_empty() {
        return Err(Error::validation("no sampled user has at least 2 tagged ratings"));
    }
    mean_diversity(&values)
}

fn epoch_hyper(hyper: &Hyperparams, epoch: usize) -> Hyperparams {
    Hyperparams { seed: hyper.seed.wrapping_add(epoch as u64), ..hyper.clone() }
}

/// Runs one recommend → append → refit cycle.
///
/// Scoring is parallel over users against the read-only model; appends happen
/// afterwards in sample order, then the model is refitted from scratch.
pub fn step_epoch(
    state: &mut SimState,
    genome: &TagRelevanceMatrix,
    config: &SimConfig,
    epoch: usize,
) -> Result<EpochRecord> {
    let candidates = genome.movie_ids();
    let active: Vec<UserId> = state.users.iter().copied().filter(|u| !state.frozen.contains(u)).collect();
    let k = config.k_per_epoch;
    let scored = par::map_slice(&active, |&u| {
        let recs = state.model.top_k_unseen(u, &state.seen[&u], candidates, k);
        let div = if recs.len() >= 2 {
            let set = MovieSet::new(recs.iter().map(|r| r.0).collect())?;
            Some(set_diversity(genome, &set)?)
        } else {
            None
        };
        Ok::<_, Error>((u, recs, div))
    });

    let mut record = EpochRecord {
        epoch,
        per_user: Vec::with_capacity(active.len()),
        stats: None,
        recommendations: Vec::with_capacity(active.len()),
        newly_frozen: Vec::new(),
    };
    for item in scored {
        let (u, recs, div) = item?;
        let seen = state.seen.get_mut(&u).expect("sampled user has a seen-set");
        for &(m, pred) in &recs {
            state.table.append(Rating::new(u, m, pred, 0), epoch as u32)?;
            seen.insert(m);
        }
        if recs.len() < k {
            warn!("user {u} exhausted the candidate pool at epoch {epoch}; frozen");
            state.frozen.insert(u);
            record.newly_frozen.push(u);
        }
        if let Some(d) = div {
            record.per_user.push((u, d));
        }
        record.recommendations.push((u, recs));
    }
    let values: Vec<f64> = record.per_user.iter().map(|p| p.1).collect();
    record.stats = if values.len() >= 2 { Some(mean_diversity(&values)?) } else { None };

    state.model = fit(&state.table, &epoch_hyper(&config.hyper, epoch))?;
    Ok(record)
}

/// Full experiment: subsample the history, fit, sample the simulated users,
/// measure the baseline, then loop `n_epochs` times.
pub fn run_simulation(
    ratings: &RatingTable,
    genome: &TagRelevanceMatrix,
    config: &SimConfig,
) -> Result<DiversityTrace> {
    run_simulation_with_state(ratings, genome, config).map(|(trace, _)| trace)
}

/// As [`run_simulation`], also returning the final loop state (the corpus
/// with every served recommendation appended, and the last model).
pub fn run_simulation_with_state(
    ratings: &RatingTable,
    genome: &TagRelevanceMatrix,
    config: &SimConfig,
) -> Result<(DiversityTrace, SimState)> {
    config.validate()?;
    let tagged = filter_to_tagged(ratings, genome);
    let (history, _) = subsample_users(&tagged, config.history_users, crate::derive_seed(config.seed, 1))?;
    let (_, sample) = subsample_users(&history, config.n_users, crate::derive_seed(config.seed, 2))?;
    info!(
        "history: {} users, {} ratings; simulating {} users",
        history.n_users(),
        history.len(),
        sample.user_ids.len()
    );
    let baseline = baseline_diversity(&history, &sample, genome)?;
    let model = fit(&history, &epoch_hyper(&config.hyper, 0))?;
    let mut state = SimState::new(history, model, sample.user_ids.clone());

    let mut per_epoch = Vec::with_capacity(config.n_epochs);
    for epoch in 1..=config.n_epochs {
        let rec = step_epoch(&mut state, genome, config, epoch)?;
        if let Some(s) = rec.stats {
            info!("epoch {epoch}: mean diversity {:.4} ± {:.4}", s.mean, s.sem);
        }
        per_epoch.push(rec);
    }
    Ok((DiversityTrace { baseline, sample, per_epoch }, state))
}

/// `|a.mean − b.mean| / sqrt(a.sem² + b.sem²)`; infinite when both standard
/// errors are zero and the means differ.
pub fn significance_between(a: MeanSem, b: MeanSem) -> f64 {
    let diff = (a.mean - b.mean).abs();
    if diff == 0.0 {
        return 0.0;
    }
    let denom = (a.sem * a.sem + b.sem * b.sem).sqrt();
    if denom == 0.0 {
        f64::INFINITY
    } else {
        diff / denom
    }
}

impl DiversityTrace {
    /// Record for 1-based `epoch`.
    pub fn epoch(&self, epoch: usize) -> Option<&EpochRecord> {
        epoch.checked_sub(1).and_then(|i| self.per_epoch.get(i))
    }
}

/// Significance of an epoch's mean diversity against the baseline.
/// `NaN` when the epoch has no aggregate.
pub fn significance(trace: &DiversityTrace, epoch: usize) -> Result<f64> {
    let rec = trace.epoch(epoch).ok_or_else(|| Error::argument(format!("epoch {epoch} not in trace")))?;
    Ok(rec.stats.map_or(f64::NAN, |s| significance_between(trace.baseline, s)))
}

fn fmt_sig(s: f64) -> String {
    if s.is_infinite() {
        "exact".to_string()
    } else {
        s.to_string()
    }
}

/// `epoch,user_id,diversity`
pub fn write_trace_csv<W: Write>(trace: &DiversityTrace, mut w: W) -> Result<()> {
    writeln!(w, "epoch,user_id,diversity")?;
    for rec in &trace.per_epoch {
        for (u, d) in &rec.per_user {
            writeln!(w, "{},{u},{d}", rec.epoch)?;
        }
    }
    Ok(())
}

/// `epoch,mean,sem,significance_vs_baseline`; epoch 0 is the baseline.
pub fn write_summary_csv<W: Write>(trace: &DiversityTrace, mut w: W) -> Result<()> {
    writeln!(w, "epoch,mean,sem,significance_vs_baseline")?;
    writeln!(w, "0,{},{},0", trace.baseline.mean, trace.baseline.sem)?;
    for rec in &trace.per_epoch {
        match rec.stats {
            Some(s) => {
                writeln!(w, "{},{},{},{}", rec.epoch, s.mean, s.sem, fmt_sig(significance_between(trace.baseline, s)))?
            }
            None => writeln!(w, "{},,,", rec.epoch)?,
        }
    }
    Ok(())
}

/// `epoch,user_id,movie_id,predicted_rating`
pub fn write_recs_csv<W: Write>(trace: &DiversityTrace, mut w: W) -> Result<()> {
    writeln!(w, "epoch,user_id,movie_id,predicted_rating")?;
    for rec in &trace.per_epoch {
        for (u, recs) in &rec.recommendations {
            for (m, p) in recs {
                writeln!(w, "{},{u},{m},{p}", rec.epoch)?;
            }
        }
    }
    Ok(())
}
