//! Domain-decomposed training, prediction aggregation, and the transfer
//! learning protocol.
//!
//! Each subdomain trains an independent full-architecture model on its slice
//! of the data; normalization statistics are shared globally and never
//! recomputed per subdomain. Once per validation interval the subdomain
//! predictions are de-normalized, aggregated with node weights, and scored
//! against the global validation targets; all models checkpoint together when
//! that score improves. Per-subdomain seeds are `seed + subdomain index`, so
//! concurrent and sequential training produce identical results.

use ndarray::Array2;
use rayon::prelude::*;
use std::time::Instant;

use crate::bracket::FlowConfig;
use crate::checkpoint::Checkpoint;
use crate::dataprep::{Dataset, NormStats, Sample};
use crate::error::{Error, Result};
use crate::graph::{extract_subgraph, SubgraphSlice};
use crate::nnet::{ModelConfig, ModelParams};
use crate::optim::AdamConfig;
use crate::partition::Partition;
use crate::train::{prepare, EpochRecord, PreparedData, Trainer};

/// One trained (or training) subdomain: its slice of the graph, parameters,
/// and per-node aggregation weights (default 1).
#[derive(Debug, Clone)]
pub struct SubdomainModel {
    pub slice: SubgraphSlice,
    pub params: ModelParams,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DdConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Aggregate validation predictions every n epochs.
    pub val_every: usize,
    pub seed: u64,
    /// Worker threads for subdomain/batch parallelism; 0 keeps the global pool.
    pub workers: usize,
    pub warm_start: Option<ModelParams>,
}

impl Default for DdConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 4,
            val_every: 1,
            seed: 0,
            workers: 0,
            warm_start: None,
        }
    }
}

/// Restricts a sample to a subgraph slice: feature/target rows through the
/// node map, edge rows through the edge map.
pub fn slice_sample(sample: &Sample, slice: &SubgraphSlice) -> Sample {
    let nv = slice.node_map.len();
    let ne = slice.edge_map.len();
    let mut node_features = Array2::zeros((nv, sample.node_features.ncols()));
    let mut targets = Array2::zeros((nv, sample.targets.ncols()));
    for (local, &global) in slice.node_map.iter().enumerate() {
        node_features
            .row_mut(local)
            .assign(&sample.node_features.row(global as usize));
        targets.row_mut(local).assign(&sample.targets.row(global as usize));
    }
    let mut edge_features = Array2::zeros((ne, sample.edge_features.ncols()));
    for (local, &global) in slice.edge_map.iter().enumerate() {
        edge_features
            .row_mut(local)
            .assign(&sample.edge_features.row(global as usize));
    }
    Sample {
        realization: sample.realization,
        snapshot: sample.snapshot,
        node_features,
        edge_features,
        targets,
    }
}

/// Per-subdomain datasets induced by a partition (plus its overlap hops).
/// Global normalization statistics are attached unchanged by the caller.
pub fn slice_dataset(
    dataset: &Dataset,
    partition: &Partition,
) -> Result<Vec<(SubgraphSlice, Dataset)>> {
    partition.validate(&dataset.graph)?;
    let subsets = partition.subdomain_subsets(&dataset.graph);
    subsets
        .iter()
        .map(|subset| {
            let slice = extract_subgraph(&dataset.graph, subset)?;
            let samples: Vec<Sample> =
                dataset.samples.iter().map(|s| slice_sample(s, &slice)).collect();
            let sub = Dataset {
                graph: slice.graph.clone(),
                samples,
                splits: dataset.splits.clone(),
            };
            Ok((slice, sub))
        })
        .collect()
}

/// One subdomain's contribution to an aggregated prediction.
pub struct AggregatePart<'a> {
    /// Local node id → global node id.
    pub node_map: &'a [u32],
    /// Local predictions, |local|×C.
    pub predictions: &'a Array2<f64>,
    /// Per-local-node aggregation weights.
    pub weights: &'a [f64],
}

/// Weighted per-node average of subdomain predictions:
/// ŷ_v = Σ_i w_{i,v}·ŷ_{i,v} / Σ_i w_{i,v}. Single-cover nodes reproduce the
/// sole prediction bit-for-bit.
pub fn aggregate(parts: &[AggregatePart], num_nodes: usize, num_cols: usize) -> Result<Array2<f64>> {
    let mut numerator = Array2::zeros((num_nodes, num_cols));
    let mut denominator = vec![0.0f64; num_nodes];
    for part in parts {
        if part.predictions.nrows() != part.node_map.len()
            || part.weights.len() != part.node_map.len()
        {
            return Err(Error::ShapeMismatch(format!(
                "aggregate part: {} predictions, {} map entries, {} weights",
                part.predictions.nrows(),
                part.node_map.len(),
                part.weights.len()
            )));
        }
        for (local, &global) in part.node_map.iter().enumerate() {
            let g = global as usize;
            let w = part.weights[local];
            if denominator[g] == 0.0 {
                for c in 0..num_cols {
                    numerator[[g, c]] = w * part.predictions[[local, c]];
                }
            } else {
                for c in 0..num_cols {
                    numerator[[g, c]] += w * part.predictions[[local, c]];
                }
            }
            denominator[g] += w;
        }
    }
    let uncovered: Vec<usize> =
        (0..num_nodes).filter(|&i| denominator[i] <= 0.0).collect();
    if !uncovered.is_empty() {
        return Err(Error::UncoveredNodes(uncovered));
    }
    for (i, mut row) in numerator.rows_mut().into_iter().enumerate() {
        let inv = denominator[i];
        for c in 0..num_cols {
            row[c] /= inv;
        }
    }
    Ok(numerator)
}

/// Result of a domain-decomposed run.
#[derive(Debug)]
pub struct DdRun {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub best_models: Vec<SubdomainModel>,
    pub final_models: Vec<SubdomainModel>,
    /// Aggregated de-normalized predictions of the best checkpoint on the
    /// validation samples, in dataset order.
    pub best_val_predictions: Vec<Array2<f64>>,
}

struct SubdomainWorker {
    slice: SubgraphSlice,
    data: PreparedData,
    trainer: Trainer,
    weights: Vec<f64>,
}

fn dd_predict_validation(
    workers: &[SubdomainWorker],
    params: Option<&[ModelParams]>,
    stats: &NormStats,
    num_nodes: usize,
    flow: &FlowConfig,
) -> Result<Vec<Array2<f64>>> {
    let num_val = workers[0].data.validation.len();
    let mut out = Vec::with_capacity(num_val);
    for v in 0..num_val {
        let locals: Vec<Result<Array2<f64>>> = workers
            .par_iter()
            .enumerate()
            .map(|(i, w)| {
                let p = params.map(|p| &p[i]).unwrap_or(&w.trainer.params);
                crate::train::predict_denormalized(
                    p,
                    &w.data.graph,
                    &w.data.validation[v].normalized,
                    stats,
                    flow,
                )
            })
            .collect();
        let mut local_preds = Vec::with_capacity(workers.len());
        for r in locals {
            local_preds.push(r?);
        }
        let parts: Vec<AggregatePart> = workers
            .iter()
            .zip(&local_preds)
            .map(|(w, p)| AggregatePart {
                node_map: &w.slice.node_map,
                predictions: p,
                weights: &w.weights,
            })
            .collect();
        out.push(aggregate(&parts, num_nodes, 2)?);
    }
    Ok(out)
}

/// Trains one model per subdomain per [Algorithm-style epoch loop]: every
/// epoch trains all subdomains (concurrently), then aggregates de-normalized
/// validation predictions, evaluates the global validation loss, and
/// checkpoints all parameters when it improves.
pub fn dd_train(
    dataset: &Dataset,
    stats: &NormStats,
    partition: &Partition,
    model: ModelConfig,
    flow: FlowConfig,
    adam: AdamConfig,
    cfg: &DdConfig,
) -> Result<DdRun> {
    if cfg.epochs == 0 {
        return Err(Error::DomainDecomposition("epochs must be ≥ 1".into()));
    }
    let slices = slice_dataset(dataset, partition)?;
    let num_nodes = dataset.graph.num_nodes();

    let mut workers: Vec<SubdomainWorker> = Vec::with_capacity(slices.len());
    for (i, (slice, sub)) in slices.into_iter().enumerate() {
        let data = prepare(&sub, stats)?;
        if data.train.is_empty() {
            return Err(Error::DomainDecomposition(format!(
                "subdomain {i} has no training samples"
            )));
        }
        let seed = cfg.seed + i as u64;
        let trainer = match &cfg.warm_start {
            Some(params) => {
                check_transfer_compat(&params.config, &model)?;
                Trainer::warm(params.clone(), flow, adam, cfg.batch_size, seed)
            }
            None => Trainer::cold(model, flow, adam, cfg.batch_size, seed),
        };
        let weights = vec![1.0; slice.node_map.len()];
        workers.push(SubdomainWorker {
            slice,
            data,
            trainer,
            weights,
        });
    }

    // raw global validation targets, in dataset order
    let val_targets: Vec<Array2<f64>> = dataset
        .split_samples(crate::dataprep::Split::Validation)
        .iter()
        .map(|s| s.targets.clone())
        .collect();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params: Vec<ModelParams> =
        workers.iter().map(|w| w.trainer.params.clone()).collect();
    let mut best_val_predictions: Vec<Array2<f64>> = Vec::new();

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let train_losses: Vec<Result<f64>> = workers
            .par_iter_mut()
            .map(|w| {
                let samples = std::mem::take(&mut w.data.train);
                let loss = w.trainer.train_epoch(&w.data.graph, &samples);
                w.data.train = samples;
                loss
            })
            .collect();
        let mut losses = Vec::with_capacity(train_losses.len());
        for (i, r) in train_losses.into_iter().enumerate() {
            losses.push(r.map_err(|e| {
                Error::DomainDecomposition(format!("subdomain {i} failed: {e}"))
            })?);
        }

        let val_loss = if epoch % cfg.val_every.max(1) == 0 || epoch + 1 == cfg.epochs {
            let preds = dd_predict_validation(&workers, None, stats, num_nodes, &flow)?;
            let mut total = 0.0;
            for (pred, target) in preds.iter().zip(&val_targets) {
                total += crate::nnet::mse_loss(pred, target)?;
            }
            let loss = total / val_targets.len().max(1) as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite("global validation loss".into()));
            }
            if loss < best_val {
                best_val = loss;
                best_epoch = epoch;
                best_params = workers.iter().map(|w| w.trainer.params.clone()).collect();
                best_val_predictions = preds;
            }
            loss
        } else {
            f64::NAN
        };

        history.push(EpochRecord {
            epoch,
            train_losses: losses,
            val_loss,
            wall_secs: t0.elapsed().as_secs_f64(),
        });
    }

    let best_models: Vec<SubdomainModel> = workers
        .iter()
        .zip(&best_params)
        .map(|(w, p)| SubdomainModel {
            slice: w.slice.clone(),
            params: p.clone(),
            weights: w.weights.clone(),
        })
        .collect();
    let final_models: Vec<SubdomainModel> = workers
        .iter()
        .map(|w| SubdomainModel {
            slice: w.slice.clone(),
            params: w.trainer.params.clone(),
            weights: w.weights.clone(),
        })
        .collect();

    Ok(DdRun {
        history,
        best_epoch,
        best_val,
        best_models,
        final_models,
        best_val_predictions,
    })
}

fn check_transfer_compat(source: &ModelConfig, target: &ModelConfig) -> Result<()> {
    let fields = [
        ("d_in", source.d_in, target.d_in),
        ("d_out", source.d_out, target.d_out),
        ("encoder_width", source.encoder_width, target.encoder_width),
        ("latent_dim", source.latent_dim, target.latent_dim),
        ("attention_hidden", source.attention_hidden, target.attention_hidden),
        ("attention_heads", source.attention_heads, target.attention_heads),
    ];
    for (name, s, t) in fields {
        if s != t {
            return Err(Error::DimensionMismatch {
                component: name.into(),
                expected: vec![t],
                found: vec![s],
            });
        }
    }
    Ok(())
}

/// Parameter transfer: copies all learnable weights verbatim onto a new
/// model; graph-dependent operators are rebuilt from the target graph at
/// evaluation time, optimizer state starts fresh, and the source
/// normalization statistics travel with the checkpoint.
pub fn transfer_params(source: &Checkpoint, target: &ModelConfig) -> Result<ModelParams> {
    check_transfer_compat(&source.params.config, target)?;
    Ok(source.params.clone())
}

/// Continues training transferred parameters on the target data; all
/// parameters adapt.
pub fn fine_tune(
    data: &PreparedData,
    params: ModelParams,
    flow: FlowConfig,
    adam: AdamConfig,
    settings: &crate::train::TrainSettings,
) -> Result<crate::train::TrainRun> {
    crate::train::train_single(data, params.config, flow, adam, settings, Some(params))
}
