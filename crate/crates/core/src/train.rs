//! Shared pieces of the training loops.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::nn::{Adam, AdamConfig, Graph, NnError, Tensor};
use crate::synth::stream_rng;
use crate::Model;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Scenes (or samples) merged into one disjoint-union graph per step.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            lr: 1e-4,
            batch_size: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

impl History {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn last_metric(&self, name: &str) -> Option<f64> {
        self.epochs.last().and_then(|e| e.metrics.get(name).copied())
    }
}

pub(crate) fn optimizer(model: &Model, cfg: &TrainConfig) -> Adam<f64> {
    Adam::new(model, AdamConfig::with_lr(cfg.lr))
}

/// Indices `0..n` in a per-epoch shuffled order, chunked into batches.
pub(crate) fn batches(n: usize, cfg: &TrainConfig, tag: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(cfg.seed, &[tag, epoch as u64]));
    order
        .chunks(cfg.batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

/// One optimisation step. `loss` maps model outputs to a scalar loss and
/// the gradient with respect to each output.
pub(crate) fn step<F>(
    model: &mut Model,
    adam: &mut Adam<f64>,
    graph: &Graph<f64>,
    loss: F,
) -> Result<(f64, Vec<Tensor<f64>>), NnError>
where
    F: FnOnce(&[Tensor<f64>]) -> Result<(f64, Vec<Tensor<f64>>), NnError>,
{
    let (outputs, cache) = model.forward(graph)?;
    let (value, grads) = loss(&outputs)?;
    if !value.is_finite() {
        return Err(NnError::TrainingDiverged(format!("loss is {value}")));
    }
    let g = model.backward(&cache, &grads)?;
    adam.step(model, &g)?;
    Ok((value, outputs))
}
