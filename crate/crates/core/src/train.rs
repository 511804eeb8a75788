//! Training loop: uniform timesteps, v-objective, Adam with cosine-annealed
//! step size.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::nn::optim::{cosine_lr, Adam};
use crate::nn::{loss_and_grad, DenoiserParams, TrainExample};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_min: f64,
    /// Independent (t, ε) draws per subject per epoch.
    pub draws_per_subject: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 8,
            lr0: 1e-5,
            lr_min: 1e-7,
            draws_per_subject: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.draws_per_subject == 0 {
            return Err(Error::Config(
                "epochs, batch_size and draws_per_subject must be positive".into(),
            ));
        }
        if !(self.lr0 > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr0) {
            return Err(Error::Config(format!(
                "invalid learning rates {} -> {}",
                self.lr0, self.lr_min
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

impl EpochLog {
    /// `epoch<TAB>mean_loss<TAB>seconds` log line.
    pub fn line(&self) -> String {
        format!("{}\t{:.6}\t{:.3}", self.epoch, self.mean_loss, self.seconds)
    }
}

/// Trains `params` in place. Calls `on_epoch` after each epoch.
///
/// Each epoch shuffles `draws_per_subject` copies of the subject list,
/// draws `t ~ U{1..T}` and fresh noise per item, and applies one Adam update
/// per batch. All randomness derives from `cfg.seed`.
pub fn train(
    params: &mut DenoiserParams,
    data: &[TrainExample<'_>],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("no training subjects".into()));
    }
    let mut opt = Adam::new(&params.values);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = cosine_lr(cfg.lr0, cfg.lr_min, epoch, cfg.epochs);
        let mut order: Vec<usize> = (0..data.len())
            .cycle()
            .take(data.len() * cfg.draws_per_subject)
            .collect();
        order.shuffle(&mut rng::stream(cfg.seed, 0x5EED, epoch as u64));

        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let lane = rng::mix(epoch as u64, b as u64);
            let mut r = rng::stream(cfg.seed, lane, 0);
            let batch: Vec<TrainExample> = chunk.iter().map(|&i| data[i]).collect();
            let steps: Vec<usize> = chunk
                .iter()
                .map(|_| r.gen_range(1..=sched.steps()))
                .collect();
            let noise = batch
                .iter()
                .map(|ex| {
                    FeatureMap::new(
                        ex.x0.order(),
                        ex.x0.channels(),
                        rng::normal_vec(&mut r, ex.x0.data().len()),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) =
                loss_and_grad(&batch, &steps, &noise, sched, params).map_err(|e| match e {
                    Error::Numerical(msg) => {
                        Error::Numerical(format!("epoch {epoch}, batch {b}: {msg}"))
                    }
                    other => other,
                })?;
            opt.update(&mut params.values, &grads, lr);
            loss_sum += loss * chunk.len() as f64;
        }
        if !params.all_finite() {
            return Err(Error::Numerical(format!(
                "parameters became non-finite in epoch {epoch}"
            )));
        }
        let log = EpochLog {
            epoch,
            mean_loss: loss_sum / order.len() as f64,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}
