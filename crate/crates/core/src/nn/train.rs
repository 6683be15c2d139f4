use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::{sgd_step, ModelParams};
use super::NnError;
use crate::seeds::StageRng;

/// A model that can score one sample of type `S` and backpropagate its loss.
pub trait Trainable<S: Sync>: Sync {
    fn params(&self) -> &ModelParams;
    fn params_mut(&mut self) -> &mut ModelParams;

    /// Loss of one sample; adds dloss/dθ into `grad`.
    fn sample_loss_grad(&self, sample: &S, grad: &mut [f64]) -> f64;

    fn sample_loss(&self, sample: &S) -> f64;

    /// Frozen coordinates receive no gradient and are skipped by checks.
    fn is_frozen(&self, _index: usize) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 50,
            batch_size: 32,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig("batch size 0".into()));
        }
        Ok(())
    }
}

/// Mean loss and mean gradient over `data[idx]`.
///
/// Per-sample gradients are computed in parallel and summed in index order,
/// so the result does not depend on the thread count.
pub fn batch_loss_grad<S: Sync, M: Trainable<S>>(
    model: &M,
    data: &[S],
    idx: &[usize],
) -> Result<(f64, ModelParams), NnError> {
    if idx.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let n_params = model.params().len();
    let parts: Vec<(f64, Vec<f64>)> = idx
        .par_iter()
        .map(|&i| {
            let mut g = vec![0.0; n_params];
            let loss = model.sample_loss_grad(&data[i], &mut g);
            (loss, g)
        })
        .collect();
    let mut grad = ModelParams::zeros(model.params().layout.clone());
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        for (acc, v) in grad.values.iter_mut().zip(g) {
            *acc += v;
        }
    }
    let scale = 1.0 / idx.len() as f64;
    grad.values.iter_mut().for_each(|v| *v *= scale);
    Ok((loss * scale, grad))
}

pub fn batch_loss<S: Sync, M: Trainable<S>>(model: &M, data: &[S]) -> f64 {
    let losses: Vec<f64> = data.par_iter().map(|s| model.sample_loss(s)).collect();
    losses.iter().sum::<f64>() / data.len().max(1) as f64
}

/// One pass of minibatch SGD. Data is shuffled with `rng` unless one batch
/// covers everything, in which case it is used in stored order.
/// Returns the mean pre-update batch loss.
pub fn train_epoch<S: Sync, M: Trainable<S>>(
    model: &mut M,
    data: &[S],
    config: &TrainConfig,
    rng: &mut StageRng,
) -> Result<f64, NnError> {
    config.validate()?;
    if data.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    if config.batch_size < data.len() {
        order.shuffle(rng);
    }
    let mut total = 0.0;
    let mut batches = 0;
    for batch in order.chunks(config.batch_size) {
        let (loss, grad) = batch_loss_grad(model, data, batch)?;
        sgd_step(model.params_mut(), &grad, config.learning_rate)?;
        total += loss;
        batches += 1;
    }
    Ok(total / batches as f64)
}
