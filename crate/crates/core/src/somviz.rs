//! Self-organizing map over tags, Ward grouping of the map's nodes, and the
//! percentile rule that marks which nodes a movie set lights up.
//!
//! Each tag is a point in movie space: its relevance row across all M movies.
//! Tags that are similarly relevant to the same movies land on the same or
//! nearby nodes.

use std::collections::BTreeSet;
use std::io::Write;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::TagRelevanceMatrix;
use crate::diversity::{squared_l2, MovieSet};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SomConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Defaults to 500 × number of tags.
    pub train_iterations: Option<usize>,
    pub initial_learning_rate: f64,
    /// Defaults to half the longer grid side.
    pub initial_radius: Option<f64>,
    pub final_learning_rate: f64,
    pub final_radius: f64,
    pub seed: u64,
}

impl Default for SomConfig {
    fn default() -> Self {
        SomConfig {
            grid_rows: 10,
            grid_cols: 10,
            train_iterations: None,
            initial_learning_rate: 0.5,
            initial_radius: None,
            final_learning_rate: 0.01,
            final_radius: 0.5,
            seed: 0,
        }
    }
}

impl SomConfig {
    pub fn n_nodes(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    fn radius0(&self) -> f64 {
        self.initial_radius.unwrap_or(self.grid_rows.max(self.grid_cols) as f64 / 2.0)
    }
}

/// A trained map. Prototypes are stored node-major, each of length M.
#[derive(Debug, Clone, PartialEq)]
pub struct SomMap {
    rows: usize,
    cols: usize,
    dim: usize,
    prototypes: Vec<f64>,
    tag_names: Vec<String>,
    tag_assignment: Vec<usize>,
    node_groups: Vec<usize>,
}

impl SomMap {
    /// Assembles a map from explicit prototypes; tags are assigned to their
    /// best-matching units and every node starts in its own group.
    pub fn from_prototypes(
        rows: usize,
        cols: usize,
        prototypes: Vec<Vec<f64>>,
        genome: &TagRelevanceMatrix,
    ) -> Result<Self> {
        if prototypes.len() != rows * cols || rows * cols == 0 {
            return Err(Error::argument("prototype count must equal grid size"));
        }
        let dim = genome.n_movies();
        if prototypes.iter().any(|p| p.len() != dim) {
            return Err(Error::argument(format!("prototypes must have length {dim}")));
        }
        let mut som = SomMap {
            rows,
            cols,
            dim,
            prototypes: prototypes.concat(),
            tag_names: genome.tag_names().to_vec(),
            tag_assignment: Vec::new(),
            node_groups: (0..rows * cols).collect(),
        };
        let data = genome.tag_rows();
        som.tag_assignment = par::map_slice(&data, |x| som.bmu(x));
        Ok(som)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_nodes(&self) -> usize {
        self.rows * self.cols
    }

    pub fn grid(&self, node: usize) -> (usize, usize) {
        (node / self.cols, node % self.cols)
    }

    pub fn prototype(&self, node: usize) -> &[f64] {
        &self.prototypes[node * self.dim..(node + 1) * self.dim]
    }

    /// Node of each tag, indexed by tag position.
    pub fn tag_assignment(&self) -> &[usize] {
        &self.tag_assignment
    }

    pub fn node_groups(&self) -> &[usize] {
        &self.node_groups
    }

    pub fn set_node_groups(&mut self, groups: Vec<usize>) -> Result<()> {
        if groups.len() != self.n_nodes() {
            return Err(Error::argument("one group id per node required"));
        }
        self.node_groups = groups;
        Ok(())
    }

    /// Tags (by position) assigned to `node`.
    pub fn node_tags(&self, node: usize) -> Vec<usize> {
        (0..self.tag_assignment.len()).filter(|&t| self.tag_assignment[t] == node).collect()
    }

    /// Best-matching unit; ties go to the lowest node index.
    pub fn bmu(&self, x: &[f64]) -> usize {
        let dists: Vec<f64> = if self.n_nodes() * self.dim >= PAR_THRESHOLD {
            par::map_range(self.n_nodes(), |n| squared_l2(self.prototype(n), x))
        } else {
            (0..self.n_nodes()).map(|n| squared_l2(self.prototype(n), x)).collect()
        };
        argmin(&dists)
    }
}

const PAR_THRESHOLD: usize = 1 << 15;

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Kohonen training on the tag vectors with a Gaussian neighborhood and
/// learning rate and radius that decay linearly over the run.
pub fn train_som(genome: &TagRelevanceMatrix, config: &SomConfig) -> Result<SomMap> {
    let nodes = config.n_nodes();
    if nodes < 2 {
        return Err(Error::argument("SOM grid needs at least 2 nodes"));
    }
    let n_tags = genome.n_tags();
    if n_tags == 0 {
        return Err(Error::argument("genome has no tags"));
    }
    if n_tags < nodes {
        warn!("only {n_tags} tags for {nodes} SOM nodes");
    }
    let data = genome.tag_rows();
    if data.iter().all(|row| row == &data[0]) {
        warn!("all tag vectors are identical; every tag will share one node");
    }
    let dim = genome.n_movies();
    let mut rng = crate::seeded_rng(config.seed);
    let prototypes: Vec<Vec<f64>> = (0..nodes).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
    let mut som = SomMap {
        rows: config.grid_rows,
        cols: config.grid_cols,
        dim,
        prototypes: prototypes.concat(),
        tag_names: genome.tag_names().to_vec(),
        tag_assignment: Vec::new(),
        node_groups: (0..nodes).collect(),
    };

    let total = config.train_iterations.unwrap_or(500 * n_tags);
    let (a0, a1) = (config.initial_learning_rate, config.final_learning_rate);
    let (r0, r1) = (config.radius0(), config.final_radius);
    let coords: Vec<(f64, f64)> = (0..nodes)
        .map(|n| {
            let (r, c) = som.grid(n);
            (r as f64, c as f64)
        })
        .collect();
    let mut order: Vec<usize> = (0..n_tags).collect();
    let parallel = nodes * dim >= PAR_THRESHOLD;

    for t in 0..total {
        if t % n_tags == 0 {
            order.shuffle(&mut rng);
        }
        let x = &data[order[t % n_tags]];
        let frac = t as f64 / total as f64;
        let alpha = a0 + (a1 - a0) * frac;
        let radius = r0 + (r1 - r0) * frac;
        let winner = som.bmu(x);
        let (wr, wc) = coords[winner];
        let denom = 2.0 * radius * radius;
        let update = |node: usize, w: &mut [f64]| {
            let (r, c) = coords[node];
            let g2 = (r - wr).powi(2) + (c - wc).powi(2);
            let step = alpha * (-g2 / denom).exp();
            if step < 1e-12 {
                return;
            }
            for (wi, xi) in w.iter_mut().zip(x) {
                *wi += step * (xi - *wi);
            }
        };
        if parallel {
            par::for_each_chunk_mut(&mut som.prototypes, dim, update);
        } else {
            som.prototypes.chunks_mut(dim).enumerate().for_each(|(n, w)| update(n, w));
        }
    }
    som.tag_assignment = par::map_slice(&data, |x| som.bmu(x));
    Ok(som)
}

/// Mean L2 distance from each tag vector to its best-matching prototype.
pub fn quantization_error(som: &SomMap, genome: &TagRelevanceMatrix) -> f64 {
    let data = genome.tag_rows();
    let d = par::map_slice(&data, |x| squared_l2(som.prototype(som.bmu(x)), x).sqrt());
    d.iter().sum::<f64>() / d.len() as f64
}

/// Ward agglomerative clustering of node prototypes, cut at `n_groups`.
///
/// Clusters are identified by their lowest node index; among equal merge
/// costs the lexicographically smallest pair merges first. Group ids are
/// numbered in order of each group's lowest node.
pub fn cluster_nodes(som: &SomMap, n_groups: usize) -> Result<Vec<usize>> {
    let n = som.n_nodes();
    if n_groups == 0 || n_groups > n {
        return Err(Error::argument(format!("n_groups must be in 1..={n}")));
    }
    // cost[i][j]: Ward merge cost |A||B|/(|A|+|B|) · ‖c_A − c_B‖²
    let mut cost: Vec<Vec<f64>> =
        par::map_range(n, |i| (0..n).map(|j| 0.5 * squared_l2(som.prototype(i), som.prototype(j))).collect());
    let mut size = vec![1usize; n];
    let mut active: Vec<bool> = vec![true; n];
    let mut owner: Vec<usize> = (0..n).collect();
    let mut clusters = n;

    while clusters > n_groups {
        let mut best: Option<(usize, usize)> = None;
        for a in (0..n).filter(|&a| active[a]) {
            for b in (a + 1..n).filter(|&b| active[b]) {
                if best.is_none_or(|(x, y)| cost[a][b] < cost[x][y]) {
                    best = Some((a, b));
                }
            }
        }
        let (a, b) = best.expect("two active clusters");
        let (na, nb) = (size[a] as f64, size[b] as f64);
        let cab = cost[a][b];
        for k in (0..n).filter(|&k| active[k] && k != a && k != b) {
            let nk = size[k] as f64;
            let merged = ((na + nk) * cost[k][a] + (nb + nk) * cost[k][b] - nk * cab) / (na + nb + nk);
            cost[k][a] = merged;
            cost[a][k] = merged;
        }
        size[a] += size[b];
        active[b] = false;
        for o in owner.iter_mut().filter(|o| **o == b) {
            *o = a;
        }
        clusters -= 1;
    }

    let reps: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
    Ok(owner.iter().map(|o| reps.binary_search(o).expect("owner is active")).collect())
}

/// Per-tag relevance thresholds at a given percentile across all movies
/// (nearest-rank definition).
#[derive(Debug, Clone)]
pub struct TagThresholds {
    pub percentile: f64,
    pub values: Vec<f64>,
}

/// Nearest-rank percentile of already-sorted values.
pub fn nearest_rank(sorted: &[f64], percentile: f64) -> f64 {
    let m = sorted.len();
    let rank = (percentile * m as f64 / 100.0).ceil() as usize;
    sorted[rank.clamp(1, m) - 1]
}

impl TagThresholds {
    pub fn new(genome: &TagRelevanceMatrix, percentile: f64) -> Result<Self> {
        if !(0.0..=100.0).contains(&percentile) {
            return Err(Error::argument("percentile must lie in [0, 100]"));
        }
        if genome.n_movies() == 0 {
            return Err(Error::argument("genome has no movies"));
        }
        let values = par::map_range(genome.n_tags(), |t| {
            let mut row = genome.tag_row(t);
            row.sort_by(f64::total_cmp);
            nearest_rank(&row, percentile)
        });
        Ok(TagThresholds { percentile, values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighlightMask {
    pub highlighted: BTreeSet<usize>,
    pub threshold_percentile: f64,
}

impl HighlightMask {
    pub fn empty(percentile: f64) -> Self {
        HighlightMask { highlighted: BTreeSet::new(), threshold_percentile: percentile }
    }
}

/// Highlights every node holding a tag whose mean relevance over `m`
/// strictly exceeds that tag's percentile threshold.
pub fn highlight_nodes(
    som: &SomMap,
    genome: &TagRelevanceMatrix,
    m: &MovieSet,
    percentile: f64,
) -> Result<HighlightMask> {
    let thresholds = TagThresholds::new(genome, percentile)?;
    highlight_nodes_with(som, genome, m, &thresholds)
}

pub fn highlight_nodes_with(
    som: &SomMap,
    genome: &TagRelevanceMatrix,
    m: &MovieSet,
    thresholds: &TagThresholds,
) -> Result<HighlightMask> {
    if m.is_empty() {
        return Err(Error::argument("cannot highlight an empty movie set"));
    }
    let idx: Vec<usize> = m
        .ids()
        .iter()
        .map(|&id| genome.index_of(id).ok_or_else(|| Error::argument(format!("movie {id} not in genome"))))
        .collect::<Result<_>>()?;
    let mut highlighted = BTreeSet::new();
    for t in 0..genome.n_tags() {
        let avg = idx.iter().map(|&i| genome.rel(t, i)).sum::<f64>() / idx.len() as f64;
        if avg > thresholds.values[t] {
            highlighted.insert(som.tag_assignment[t]);
        }
    }
    Ok(HighlightMask { highlighted, threshold_percentile: thresholds.percentile })
}

const EXPORT_FORMAT: &str = "echosim-som";
const EXPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagWeight {
    pub tag: String,
    /// Mean relevance of the tag over all movies.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeExport {
    pub node: usize,
    pub row: usize,
    pub col: usize,
    pub group: usize,
    pub highlighted: bool,
    pub tags: Vec<TagWeight>,
}

/// Word-cloud-ready description of a trained map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomExport {
    pub format: String,
    pub version: u32,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub n_groups: usize,
    pub threshold_percentile: Option<f64>,
    pub tag_names: Vec<String>,
    pub nodes: Vec<NodeExport>,
}

pub fn export_som(som: &SomMap, genome: &TagRelevanceMatrix, mask: Option<&HighlightMask>) -> SomExport {
    let m = genome.n_movies().max(1) as f64;
    let weights: Vec<f64> =
        (0..genome.n_tags()).map(|t| (0..genome.n_movies()).map(|i| genome.rel(t, i)).sum::<f64>() / m).collect();
    let nodes = (0..som.n_nodes())
        .map(|node| {
            let (row, col) = som.grid(node);
            NodeExport {
                node,
                row,
                col,
                group: som.node_groups[node],
                highlighted: mask.is_some_and(|mk| mk.highlighted.contains(&node)),
                tags: som
                    .node_tags(node)
                    .into_iter()
                    .map(|t| TagWeight { tag: som.tag_names[t].clone(), weight: weights[t] })
                    .collect(),
            }
        })
        .collect();
    SomExport {
        format: EXPORT_FORMAT.into(),
        version: EXPORT_VERSION,
        grid_rows: som.rows,
        grid_cols: som.cols,
        n_groups: som.node_groups.iter().max().map_or(0, |g| g + 1),
        threshold_percentile: mask.map(|mk| mk.threshold_percentile),
        tag_names: som.tag_names.clone(),
        nodes,
    }
}

impl SomExport {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SomExport = serde_json::from_str(text)?;
        if doc.format != EXPORT_FORMAT || doc.version != EXPORT_VERSION {
            return Err(Error::validation(format!("unsupported SOM file {} v{}", doc.format, doc.version)));
        }
        Ok(doc)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Recovers the tag → node assignment, indexed by tag position.
    pub fn tag_assignment(&self) -> Result<Vec<usize>> {
        let pos: std::collections::HashMap<&str, usize> =
            self.tag_names.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        let mut out = vec![usize::MAX; self.tag_names.len()];
        for node in &self.nodes {
            for tw in &node.tags {
                let i =
                    *pos.get(tw.tag.as_str()).ok_or_else(|| Error::validation(format!("unknown tag {}", tw.tag)))?;
                out[i] = node.node;
            }
        }
        if out.contains(&usize::MAX) {
            return Err(Error::validation("some tags are not assigned to any node"));
        }
        Ok(out)
    }
}

/// `epoch,node_row,node_col,highlighted` for each (epoch, mask) pair.
pub fn write_highlights_csv<W: Write>(som: &SomMap, masks: &[(usize, HighlightMask)], mut w: W) -> Result<()> {
    writeln!(w, "epoch,node_row,node_col,highlighted")?;
    for (epoch, mask) in masks {
        for node in 0..som.n_nodes() {
            let (r, c) = som.grid(node);
            writeln!(w, "{epoch},{r},{c},{}", mask.highlighted.contains(&node) as u8)?;
        }
    }
    Ok(())
}
