//! Mini-batch training loops with validation-driven checkpointing.
//!
//! Training operates on normalized samples; validation losses are computed on
//! de-normalized predictions against raw targets. All randomness flows from a
//! single per-trainer seed (parameter init, then per-epoch shuffles), so runs
//! are bit-reproducible; batch gradients are reduced in sample index order
//! regardless of worker scheduling.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::bracket::FlowConfig;
use crate::dataprep::{denormalize_predictions, normalize_sample, Dataset, NormStats, Sample, Split};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nnet::{batch_grad, forward, ModelConfig, ModelParams};
use crate::optim::{adam_step, AdamConfig, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    /// Evaluate validation (and checkpoint) every n epochs.
    pub val_every: usize,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 4,
            val_every: 1,
            seed: 0,
        }
    }
}

/// A normalized sample paired with its raw targets for de-normalized metrics.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub normalized: Sample,
    pub raw_targets: Array2<f64>,
}

/// Normalized training inputs plus evaluation splits for one graph.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub graph: Graph,
    pub stats: NormStats,
    pub train: Vec<Sample>,
    pub validation: Vec<EvalSample>,
    pub test: Vec<EvalSample>,
}

/// Normalizes every split of a dataset with the frozen statistics.
pub fn prepare(dataset: &Dataset, stats: &NormStats) -> Result<PreparedData> {
    let norm = |s: &Sample| normalize_sample(s, stats);
    let eval = |s: &Sample| -> Result<EvalSample> {
        Ok(EvalSample {
            normalized: norm(s)?,
            raw_targets: s.targets.clone(),
        })
    };
    Ok(PreparedData {
        graph: dataset.graph.clone(),
        stats: stats.clone(),
        train: dataset
            .split_samples(Split::Train)
            .into_iter()
            .map(norm)
            .collect::<Result<_>>()?,
        validation: dataset
            .split_samples(Split::Validation)
            .into_iter()
            .map(eval)
            .collect::<Result<_>>()?,
        test: dataset
            .split_samples(Split::Test)
            .into_iter()
            .map(eval)
            .collect::<Result<_>>()?,
    })
}

/// One model being optimized; owns parameters, optimizer state, and the RNG
/// stream that drives shuffling.
pub struct Trainer {
    pub params: ModelParams,
    pub opt: OptimizerState,
    pub flow: FlowConfig,
    pub batch_size: usize,
    rng: ChaCha12Rng,
    clamp_events: usize,
}

impl Trainer {
    /// Cold start: parameters drawn from the seed, which then continues to
    /// drive epoch shuffles.
    pub fn cold(
        model: ModelConfig,
        flow: FlowConfig,
        adam: AdamConfig,
        batch_size: usize,
        seed: u64,
    ) -> Self {
        let params = ModelParams::init(model, seed);
        let opt = OptimizerState::new(&params, adam);
        Self {
            params,
            opt,
            flow,
            batch_size,
            rng: ChaCha12Rng::seed_from_u64(seed),
            clamp_events: 0,
        }
    }

    /// Warm start from transferred parameters; optimizer state is reset.
    pub fn warm(
        params: ModelParams,
        flow: FlowConfig,
        adam: AdamConfig,
        batch_size: usize,
        seed: u64,
    ) -> Self {
        let opt = OptimizerState::new(&params, adam);
        Self {
            params,
            opt,
            flow,
            batch_size,
            rng: ChaCha12Rng::seed_from_u64(seed),
            clamp_events: 0,
        }
    }

    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    /// One pass over the shuffled training samples in mini-batches; returns
    /// the mean per-sample training loss.
    pub fn train_epoch(&mut self, graph: &Graph, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Dataset("train_epoch on an empty split".into()));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut self.rng);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(self.batch_size.max(1)) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, grads, clamps) = batch_grad(&self.params, graph, &batch, &self.flow)?;
            self.clamp_events += clamps;
            adam_step(&mut self.params, &grads, &mut self.opt)?;
            loss_sum += loss * batch.len() as f64;
        }
        Ok(loss_sum / samples.len() as f64)
    }
}

/// De-normalized predictions for one normalized sample.
pub fn predict_denormalized(
    params: &ModelParams,
    graph: &Graph,
    normalized: &Sample,
    stats: &NormStats,
    flow: &FlowConfig,
) -> Result<Array2<f64>> {
    let pred = forward(normalized, params, flow, graph)?;
    Ok(denormalize_predictions(&pred, stats))
}

/// Mean over samples of the sum of squared de-normalized errors.
pub fn validation_loss(
    params: &ModelParams,
    graph: &Graph,
    samples: &[EvalSample],
    stats: &NormStats,
    flow: &FlowConfig,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Dataset("validation split is empty".into()));
    }
    let per: Vec<Result<f64>> = samples
        .par_iter()
        .map(|s| {
            let pred = predict_denormalized(params, graph, &s.normalized, stats, flow)?;
            crate::nnet::mse_loss(&pred, &s.raw_targets)
        })
        .collect();
    let mut total = 0.0;
    for r in per {
        total += r?;
    }
    let loss = total / samples.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("validation loss".into()));
    }
    Ok(loss)
}

/// Relative L2 error ‖ŷ−y‖₂/‖y‖₂ over all nodes and components of a split,
/// on de-normalized predictions.
pub fn relative_l2(
    params: &ModelParams,
    graph: &Graph,
    samples: &[EvalSample],
    stats: &NormStats,
    flow: &FlowConfig,
) -> Result<f64> {
    let per: Vec<Result<(f64, f64)>> = samples
        .par_iter()
        .map(|s| {
            let pred = predict_denormalized(params, graph, &s.normalized, stats, flow)?;
            let num: f64 = pred
                .iter()
                .zip(s.raw_targets.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let den: f64 = s.raw_targets.iter().map(|v| v * v).sum();
            Ok((num, den))
        })
        .collect();
    let mut num = 0.0;
    let mut den = 0.0;
    for r in per {
        let (n, d) = r?;
        num += n;
        den += d;
    }
    Ok((num / den).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Per-model training losses (one entry for global training).
    pub train_losses: Vec<f64>,
    /// De-normalized global validation loss; NaN on epochs where validation
    /// was skipped (val_every > 1).
    pub val_loss: f64,
    pub wall_secs: f64,
}

#[derive(Debug)]
pub struct TrainRun {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub best_params: ModelParams,
    pub final_params: ModelParams,
    pub optimizer: OptimizerState,
}

/// Global (single-model) training with per-epoch validation checkpointing.
pub fn train_single(
    data: &PreparedData,
    model: ModelConfig,
    flow: FlowConfig,
    adam: AdamConfig,
    settings: &TrainSettings,
    warm_start: Option<ModelParams>,
) -> Result<TrainRun> {
    let mut trainer = match warm_start {
        Some(params) => Trainer::warm(params, flow, adam, settings.batch_size, settings.seed),
        None => Trainer::cold(model, flow, adam, settings.batch_size, settings.seed),
    };
    let mut history = Vec::with_capacity(settings.epochs);
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params = trainer.params.clone();

    for epoch in 0..settings.epochs {
        let t0 = Instant::now();
        let train_loss = trainer.train_epoch(&data.graph, &data.train)?;
        let val_loss = if epoch % settings.val_every.max(1) == 0 || epoch + 1 == settings.epochs {
            let v = validation_loss(&trainer.params, &data.graph, &data.validation, &data.stats, &trainer.flow)?;
            if v < best_val {
                best_val = v;
                best_epoch = epoch;
                best_params = trainer.params.clone();
            }
            v
        } else {
            f64::NAN
        };
        history.push(EpochRecord {
            epoch,
            train_losses: vec![train_loss],
            val_loss,
            wall_secs: t0.elapsed().as_secs_f64(),
        });
    }

    Ok(TrainRun {
        history,
        best_epoch,
        best_val,
        best_params,
        final_params: trainer.params,
        optimizer: trainer.opt,
    })
}
