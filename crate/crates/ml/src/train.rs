//! End-to-end training: minimizes the total binary cross-entropy between
//! transmitted bits and sigmoid(LLR) over all data REs, through the
//! equalizer, the effective noise variances and the demapper.
//!
//! Batches are sharded per RG across threads; shard gradients are averaged
//! in RG order, so results are bit-stable for a fixed seed regardless of
//! thread count.

use mulink_autodiff::{adam_step_with_grads, AdamState};
use mulink_core::grid::{Constellation, GridConfig, PilotPattern};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::params::{DownlinkParams, UplinkParams};
use crate::receiver_dl::{downlink_forward, DlRgInput};
use crate::receiver_ul::{uplink_forward, MlScheme, UlRgInput};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 1e-3, batch_size: 27, epochs: 10, seed: 0 }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy)]
pub struct TrainLogRow {
    pub step: u64,
    pub loss: f64,
    pub gamma: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite loss at step {step} (rg {rg}): {loss}")]
    NonFiniteLoss { step: u64, rg: usize, loss: f64 },
    #[error("empty training set")]
    EmptyDataset,
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e3779b97f4a7c15));
    order.shuffle(&mut rng);
    order
}

/// Trains the uplink parameters in place. `scheme` selects the ML channel
/// estimator alone (conventional demapper, its correction net stays at the
/// zero initialization) or the full ML receiver.
pub fn train_uplink(
    dataset: &[UlRgInput],
    grid: &GridConfig,
    pattern: &PilotPattern,
    constellation: &Constellation,
    params: &UplinkParams,
    scheme: MlScheme,
    cfg: &TrainConfig,
) -> Result<Vec<TrainLogRow>, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let tensors = params.params();
    let mut state = AdamState::new(&tensors, cfg.learning_rate);
    let mut log = Vec::new();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(dataset.len(), cfg.seed, epoch);
        for batch in order.chunks(cfg.batch_size) {
            let values = params.to_values();
            let arch = params.arch;
            let results: Vec<(f64, Vec<Vec<f64>>)> = batch
                .par_iter()
                .map(|&idx| {
                    let local = UplinkParams::from_values(arch, &values);
                    let out =
                        uplink_forward(&dataset[idx], grid, pattern, constellation, &local, scheme);
                    let loss = out.loss.expect("training RGs carry bits");
                    let loss_v = loss.item();
                    loss.backward().expect("fresh graph");
                    let grads: Vec<Vec<f64>> = local
                        .params()
                        .iter()
                        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
                        .collect();
                    (loss_v, grads)
                })
                .collect();
            step += 1;
            let inv = 1.0 / batch.len() as f64;
            let mut mean_loss = 0.0;
            let mut grads: Vec<Vec<f64>> =
                tensors.iter().map(|t| vec![0.0; t.numel()]).collect();
            for (bi, (loss_v, g)) in results.iter().enumerate() {
                if !loss_v.is_finite() {
                    return Err(TrainError::NonFiniteLoss { step, rg: batch[bi], loss: *loss_v });
                }
                mean_loss += loss_v * inv;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    for (a, b) in acc.iter_mut().zip(gi) {
                        *a += b * inv;
                    }
                }
            }
            adam_step_with_grads(&tensors, &grads, &mut state);
            log.push(TrainLogRow { step, loss: mean_loss, gamma: params.gamma() });
        }
    }
    Ok(log)
}

/// Downlink counterpart over UE-side inputs.
pub fn train_downlink(
    dataset: &[DlRgInput],
    grid: &GridConfig,
    pattern: &PilotPattern,
    constellation: &Constellation,
    params: &DownlinkParams,
    scheme: MlScheme,
    cfg: &TrainConfig,
) -> Result<Vec<TrainLogRow>, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let tensors = params.params();
    let mut state = AdamState::new(&tensors, cfg.learning_rate);
    let mut log = Vec::new();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(dataset.len(), cfg.seed, epoch);
        for batch in order.chunks(cfg.batch_size) {
            let values = params.to_values();
            let arch = params.arch;
            let results: Vec<(f64, Vec<Vec<f64>>)> = batch
                .par_iter()
                .map(|&idx| {
                    let local = DownlinkParams::from_values(arch, &values);
                    let out = downlink_forward(
                        &dataset[idx],
                        grid,
                        pattern,
                        constellation,
                        &local,
                        scheme,
                    );
                    let loss = out.loss.expect("training RGs carry bits");
                    let loss_v = loss.item();
                    loss.backward().expect("fresh graph");
                    let grads: Vec<Vec<f64>> = local
                        .params()
                        .iter()
                        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
                        .collect();
                    (loss_v, grads)
                })
                .collect();
            step += 1;
            let inv = 1.0 / batch.len() as f64;
            let mut mean_loss = 0.0;
            let mut grads: Vec<Vec<f64>> =
                tensors.iter().map(|t| vec![0.0; t.numel()]).collect();
            for (bi, (loss_v, g)) in results.iter().enumerate() {
                if !loss_v.is_finite() {
                    return Err(TrainError::NonFiniteLoss { step, rg: batch[bi], loss: *loss_v });
                }
                mean_loss += loss_v * inv;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    for (a, b) in acc.iter_mut().zip(gi) {
                        *a += b * inv;
                    }
                }
            }
            adam_step_with_grads(&tensors, &grads, &mut state);
            log.push(TrainLogRow { step, loss: mean_loss, gamma: 0.0 });
        }
    }
    Ok(log)
}
