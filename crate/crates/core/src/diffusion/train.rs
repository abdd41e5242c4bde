//! Denoising-score-matching training with Adam.
//!
//! Deterministic given the config seed: epochs reseed a ChaCha stream, the
//! shuffle order is fixed, and gradients reduce in sample order.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{
    forward_with_gradients, init_params, save_params, Checkpoint, NetworkConfig, Params,
    TrainState,
};

use super::{dsm_batch, dsm_draws, NoiseSchedule, TrainingSet};

/// Optimizer and loop settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Save a checkpoint every this many epochs; 0 disables periodic saves.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

impl TrainConfig {
    /// CPU-minutes preset: 100 epochs at a larger learning rate.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
            checkpoint_every: 0,
        }
    }

    /// The original training protocol: 500 epochs, batch 32, learning rate
    /// and weight decay 1e-4.
    pub fn paper() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 32,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            seed: 0,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument(
                "need learning_rate > 0 and weight_decay >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Trained parameters plus the per-epoch mean loss curve.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Params,
    pub loss_curve: Vec<f64>,
    pub state: TrainState,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn resume(state: &TrainState) -> Self {
        Adam {
            m: state.m.clone(),
            v: state.v.clone(),
            t: state.adam_step,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i] + weight_decay * params[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Train the score network on a dataset.
///
/// `resume` continues epoch numbering and optimizer state from a previous
/// checkpoint. `on_epoch` observes `(epoch index, mean loss)` after every
/// epoch.
#[allow(clippy::too_many_arguments)]
pub fn train(
    set: &TrainingSet,
    net_cfg: &NetworkConfig,
    schedule: &NoiseSchedule,
    train_cfg: &TrainConfig,
    sigma_scaled: bool,
    resume: Option<(Params, TrainState)>,
    checkpoint_path: Option<&Path>,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    net_cfg.validate()?;
    schedule.validate()?;
    train_cfg.validate()?;
    if set.samples.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }

    let (mut params, mut adam, start_epoch) = match resume {
        Some((params, state)) => {
            if params.len() != net_cfg.param_count() {
                return Err(Error::ShapeMismatch(
                    "resumed parameters do not match the network config".into(),
                ));
            }
            let adam = Adam::resume(&state);
            (params, adam, state.epoch)
        }
        None => {
            let params = init_params(net_cfg, train_cfg.seed)?;
            let n = params.len();
            (params, Adam::new(n), 0)
        }
    };

    let mut loss_curve = Vec::new();
    let n = set.samples.len();
    for epoch in start_epoch..start_epoch + train_cfg.epochs {
        let mut rng = epoch_rng(train_cfg.seed, epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for (batch_idx, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let draws = dsm_draws(set, chunk, schedule, &mut rng)?;
            let batch = dsm_batch(set, &draws, schedule, sigma_scaled);
            let (loss, grads) = forward_with_gradients(&batch, &params, net_cfg)?;
            if !loss.is_finite() {
                return Err(Error::NumericalFailure(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_idx}"
                )));
            }
            adam.step(
                &mut params.data,
                &grads,
                train_cfg.learning_rate,
                train_cfg.weight_decay,
            );
            epoch_loss += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let mean = epoch_loss / seen as f64;
        loss_curve.push(mean);
        on_epoch(epoch, mean);

        if train_cfg.checkpoint_every > 0
            && (epoch + 1 - start_epoch) % train_cfg.checkpoint_every == 0
        {
            if let Some(path) = checkpoint_path {
                save_params(
                    path,
                    &Checkpoint {
                        config: net_cfg.clone(),
                        params: params.clone(),
                        train_state: Some(TrainState {
                            epoch: epoch + 1,
                            adam_step: adam.t,
                            m: adam.m.clone(),
                            v: adam.v.clone(),
                        }),
                    },
                )?;
            }
        }
    }

    let state = TrainState {
        epoch: start_epoch + train_cfg.epochs,
        adam_step: adam.t,
        m: adam.m,
        v: adam.v,
    };
    Ok(TrainOutcome {
        params,
        loss_curve,
        state,
    })
}
