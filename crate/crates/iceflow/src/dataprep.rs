//! Feature assembly, global normalization statistics, and dataset slicing.
//!
//! Node features are, in column order: ice thickness [m], bed topography [m],
//! basal friction, grounded flag, floating flag. Continuous columns and
//! velocity targets are z-scored; edge distances are min-max scaled; flags
//! pass through unchanged. All statistics are computed once on the training
//! split with population (divide-by-N) convention and then frozen.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::util::KahanSum;

pub const FEATURE_COUNT: usize = 5;
pub const TARGET_COUNT: usize = 2;
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] =
    ["thickness", "bed", "friction", "grounded", "floating"];
/// Columns that are z-scored; the trailing two are Boolean flags.
pub const CONTINUOUS_FEATURES: [usize; 3] = [0, 1, 2];
pub const GROUNDED_COL: usize = 3;
pub const FLOATING_COL: usize = 4;

/// Per-node inputs, per-edge distances, and per-node velocity targets for one
/// snapshot of one realization.
#[derive(Debug, Clone)]
pub struct Sample {
    pub realization: u32,
    pub snapshot: u32,
    /// V×5 raw (or normalized) node features.
    pub node_features: Array2<f64>,
    /// E×1 edge lengths.
    pub edge_features: Array2<f64>,
    /// V×2 velocity components.
    pub targets: Array2<f64>,
}

impl Sample {
    /// Shape consistency against the owning graph.
    pub fn check_shapes(&self, graph: &Graph) -> Result<()> {
        let v = graph.num_nodes();
        let e = graph.num_edges();
        if self.node_features.dim() != (v, FEATURE_COUNT) {
            return Err(Error::ShapeMismatch(format!(
                "sample ({}, {}): node_features {:?}, expected ({v}, {FEATURE_COUNT})",
                self.realization,
                self.snapshot,
                self.node_features.dim()
            )));
        }
        if self.edge_features.dim() != (e, 1) {
            return Err(Error::ShapeMismatch(format!(
                "sample ({}, {}): edge_features {:?}, expected ({e}, 1)",
                self.realization,
                self.snapshot,
                self.edge_features.dim()
            )));
        }
        if self.targets.dim() != (v, TARGET_COUNT) {
            return Err(Error::ShapeMismatch(format!(
                "sample ({}, {}): targets {:?}, expected ({v}, {TARGET_COUNT})",
                self.realization,
                self.snapshot,
                self.targets.dim()
            )));
        }
        Ok(())
    }

    /// Physical-range invariants of a *raw* sample. Normalized samples do not
    /// satisfy these; validation is applied at load/generation time only.
    pub fn validate_raw(&self, graph: &Graph) -> Result<()> {
        self.check_shapes(graph)?;
        for (i, row) in self.node_features.rows().into_iter().enumerate() {
            if row[0] < 0.0 {
                return Err(Error::Dataset(format!("node {i}: negative ice thickness {}", row[0])));
            }
            if row[2] <= 0.0 {
                return Err(Error::Dataset(format!("node {i}: non-positive friction {}", row[2])));
            }
            let (g, f) = (row[GROUNDED_COL], row[FLOATING_COL]);
            if !((g == 0.0 || g == 1.0) && (f == 0.0 || f == 1.0) && g + f == 1.0) {
                return Err(Error::Dataset(format!(
                    "node {i}: grounded/floating flags ({g}, {f}) must be Boolean and exclusive"
                )));
            }
        }
        if let Some((alpha, &d)) = self
            .edge_features
            .column(0)
            .iter()
            .enumerate()
            .find(|(_, &d)| d <= 0.0)
        {
            return Err(Error::Dataset(format!("edge {alpha}: non-positive length {d}")));
        }
        Ok(())
    }
}

/// Frozen global normalization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub dist_min: f64,
    pub dist_max: f64,
    pub target_mu: Vec<f64>,
    pub target_sigma: Vec<f64>,
}

/// z-score normalization: z' = (z − μ)/σ.
pub fn zscore(value: f64, mu: f64, sigma: f64) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::Stats(format!("z-score requires sigma > 0, got {sigma}")));
    }
    Ok((value - mu) / sigma)
}

/// min-max normalization: d' = (d − min)/(max − min). Values outside the
/// training bounds are not clamped.
pub fn minmax(d: f64, dmin: f64, dmax: f64) -> Result<f64> {
    if dmax <= dmin {
        return Err(Error::Stats(format!(
            "min-max requires dmax > dmin, got [{dmin}, {dmax}]"
        )));
    }
    Ok((d - dmin) / (dmax - dmin))
}

fn population_mean_std(count: usize, values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let mut sum = KahanSum::new();
    for v in values.clone() {
        sum.add(v);
    }
    let mean = sum.value() / count as f64;
    let mut sq = KahanSum::new();
    for v in values {
        sq.add((v - mean) * (v - mean));
    }
    (mean, (sq.value() / count as f64).sqrt())
}

/// Population mean/std per feature and target component over all nodes of all
/// training samples, and min/max over all edge lengths.
pub fn compute_stats(train_samples: &[&Sample]) -> Result<NormStats> {
    if train_samples.is_empty() {
        return Err(Error::Stats("cannot compute statistics of an empty training set".into()));
    }
    let node_count: usize = train_samples.iter().map(|s| s.node_features.nrows()).sum();

    let mut mu = Vec::with_capacity(FEATURE_COUNT);
    let mut sigma = Vec::with_capacity(FEATURE_COUNT);
    for col in 0..FEATURE_COUNT {
        let values = train_samples
            .iter()
            .flat_map(move |s| s.node_features.column(col).into_iter().copied());
        let (m, sd) = population_mean_std(node_count, values);
        if sd <= 0.0 {
            return Err(Error::Stats(format!(
                "feature '{}' is constant over the training split",
                FEATURE_NAMES[col]
            )));
        }
        mu.push(m);
        sigma.push(sd);
    }

    let mut target_mu = Vec::with_capacity(TARGET_COUNT);
    let mut target_sigma = Vec::with_capacity(TARGET_COUNT);
    for col in 0..TARGET_COUNT {
        let values = train_samples
            .iter()
            .flat_map(move |s| s.targets.column(col).into_iter().copied());
        let (m, sd) = population_mean_std(node_count, values);
        if sd <= 0.0 {
            return Err(Error::Stats(format!("target component {col} is constant")));
        }
        target_mu.push(m);
        target_sigma.push(sd);
    }

    let mut dist_min = f64::INFINITY;
    let mut dist_max = f64::NEG_INFINITY;
    for s in train_samples {
        for &d in s.edge_features.column(0) {
            dist_min = dist_min.min(d);
            dist_max = dist_max.max(d);
        }
    }
    if !(dist_max > dist_min) {
        return Err(Error::Stats(format!(
            "edge distances are constant: min {dist_min} = max {dist_max}"
        )));
    }

    Ok(NormStats {
        mu,
        sigma,
        dist_min,
        dist_max,
        target_mu,
        target_sigma,
    })
}

/// Applies the frozen statistics: z-score on continuous features and targets,
/// min-max on edge distances, flags unchanged.
pub fn normalize_sample(sample: &Sample, stats: &NormStats) -> Result<Sample> {
    if sample.node_features.ncols() != stats.mu.len() {
        return Err(Error::ShapeMismatch(format!(
            "sample has {} feature columns, stats have {}",
            sample.node_features.ncols(),
            stats.mu.len()
        )));
    }
    let mut node_features = sample.node_features.clone();
    for &col in &CONTINUOUS_FEATURES {
        for v in node_features.column_mut(col) {
            *v = zscore(*v, stats.mu[col], stats.sigma[col])?;
        }
    }
    let mut edge_features = sample.edge_features.clone();
    for v in edge_features.iter_mut() {
        *v = minmax(*v, stats.dist_min, stats.dist_max)?;
    }
    let mut targets = sample.targets.clone();
    for col in 0..TARGET_COUNT {
        for v in targets.column_mut(col) {
            *v = zscore(*v, stats.target_mu[col], stats.target_sigma[col])?;
        }
    }
    Ok(Sample {
        realization: sample.realization,
        snapshot: sample.snapshot,
        node_features,
        edge_features,
        targets,
    })
}

/// Exact inverse of the target z-scoring.
pub fn denormalize_predictions(pred: &Array2<f64>, stats: &NormStats) -> Array2<f64> {
    let mut out = pred.clone();
    for col in 0..out.ncols().min(TARGET_COUNT) {
        for v in out.column_mut(col) {
            *v = *v * stats.target_sigma[col] + stats.target_mu[col];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

/// A graph, its snapshots, and the split label of each realization.
/// Splits are per realization, so snapshots of one realization can never
/// straddle two splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: Graph,
    pub samples: Vec<Sample>,
    pub splits: BTreeMap<u32, Split>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            s.validate_raw(&self.graph)?;
            if !self.splits.contains_key(&s.realization) {
                return Err(Error::Dataset(format!(
                    "realization {} has no split assignment",
                    s.realization
                )));
            }
        }
        Ok(())
    }

    pub fn split_samples(&self, split: Split) -> Vec<&Sample> {
        self.samples
            .iter()
            .filter(|s| self.splits.get(&s.realization) == Some(&split))
            .collect()
    }

    /// Statistics of the training split.
    pub fn train_stats(&self) -> Result<NormStats> {
        compute_stats(&self.split_samples(Split::Train))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleFile {
    realization: u32,
    snapshot: u32,
    node_features: Vec<Vec<f64>>,
    edge_features: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dataset(format!("{what}: ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((nrows, ncols), flat)
        .map_err(|e| Error::Dataset(format!("{what}: {e}")))
}

pub fn sample_file_name(realization: u32, snapshot: u32) -> String {
    format!("sample_{realization}_{snapshot}.json")
}

pub fn save_sample(sample: &Sample, dir: &Path) -> Result<()> {
    let file = SampleFile {
        realization: sample.realization,
        snapshot: sample.snapshot,
        node_features: to_rows(&sample.node_features),
        edge_features: to_rows(&sample.edge_features),
        targets: to_rows(&sample.targets),
    };
    let path = dir.join(sample_file_name(sample.realization, sample.snapshot));
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

fn load_sample(path: &Path) -> Result<Sample> {
    let file: SampleFile = serde_json::from_slice(&std::fs::read(path)?)?;
    Ok(Sample {
        realization: file.realization,
        snapshot: file.snapshot,
        node_features: from_rows(&file.node_features, "node_features")?,
        edge_features: from_rows(&file.edge_features, "edge_features")?,
        targets: from_rows(&file.targets, "targets")?,
    })
}

/// Writes the dataset directory layout: `graph.json`, `stats.json`,
/// `splits.json`, and one `sample_<realization>_<snapshot>.json` per snapshot.
pub fn save_dataset(dataset: &Dataset, stats: &NormStats, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::graph::save_graph(&dataset.graph, &dir.join("graph.json"))?;
    std::fs::write(dir.join("stats.json"), serde_json::to_string(stats)?)?;
    let splits: BTreeMap<String, Split> =
        dataset.splits.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    std::fs::write(dir.join("splits.json"), serde_json::to_string(&splits)?)?;
    for s in &dataset.samples {
        save_sample(s, dir)?;
    }
    Ok(())
}

/// Loads a dataset directory and validates every sample.
pub fn load_dataset(dir: &Path) -> Result<(Dataset, NormStats)> {
    let graph = crate::graph::load_graph(&dir.join("graph.json"))?;
    let stats: NormStats = serde_json::from_slice(&std::fs::read(dir.join("stats.json"))?)?;
    let raw: BTreeMap<String, Split> =
        serde_json::from_slice(&std::fs::read(dir.join("splits.json"))?)?;
    let mut splits = BTreeMap::new();
    for (k, v) in raw {
        let id: u32 = k
            .parse()
            .map_err(|_| Error::Dataset(format!("splits.json: bad realization id '{k}'")))?;
        splits.insert(id, v);
    }

    let mut sample_paths = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("sample_") && name.ends_with(".json") {
            sample_paths.push(entry.path());
        }
    }
    let mut samples = Vec::with_capacity(sample_paths.len());
    for path in sample_paths {
        samples.push(load_sample(&path)?);
    }
    samples.sort_by_key(|s| (s.realization, s.snapshot));

    let dataset = Dataset { graph, samples, splits };
    dataset.validate()?;
    Ok((dataset, stats))
}
