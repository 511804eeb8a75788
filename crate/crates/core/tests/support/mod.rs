//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeMap;

use icodiff::diffusion::cosine_schedule;
use icodiff::nn::{
    loss_and_grad_with, Conditioning, DenoiserConfig, DenoiserParams, Mat, TrainExample,
};
use icodiff::{prefix_count, rng, FeatureMap};

pub const FD_STEP: f64 = 1e-3;
pub const FD_MAX_REL_ERR: f64 = 1e-2;
const ENTRIES_PER_ARRAY: usize = 6;

/// Finite-difference agreement of one parameter group.
#[derive(Debug, Clone, Copy)]
pub struct GroupCheck {
    pub entries: usize,
    pub rel_err: f64,
    pub grad_norm: f64,
}

pub fn perturbed_params(cfg: &DenoiserConfig, seed: u64) -> DenoiserParams {
    // Move every array away from its special initial value (zeros, ones) so
    // each parameter influences the loss.
    let mut p = DenoiserParams::init(cfg, seed).unwrap();
    let mut r = rng::stream(seed, 0xF00D, 0);
    for m in p.values.iter_mut() {
        let noise = rng::normal_vec(&mut r, m.data.len());
        for (x, n) in m.data.iter_mut().zip(noise) {
            *x += 0.2 * n;
        }
    }
    p
}

pub fn random_mask(order: usize, seed: u64) -> FeatureMap {
    let bits: Vec<bool> = rng::normal_vec(&mut rng::stream(seed, 1, 0), prefix_count(order))
        .into_iter()
        .map(|x| x > 0.0)
        .collect();
    FeatureMap::from_fn(order, 2, |c, v| if bits[v] == (c == 0) { 1.0 } else { 0.0 })
}

pub fn random_field(order: usize, channels: usize, seed: u64, scale: f32) -> FeatureMap {
    let v = prefix_count(order);
    let data = rng::normal_vec(&mut rng::stream(seed, 2, 0), channels * v)
        .iter()
        .map(|x| scale * x)
        .collect();
    FeatureMap::new(order, channels, data).unwrap()
}

/// Central differences against the analytic f64 gradient of the batch-2
/// v-prediction loss on the tiny configuration, a few random entries per
/// parameter array, aggregated per parameter group.
pub fn gradient_check() -> BTreeMap<&'static str, GroupCheck> {
    let cfg = DenoiserConfig::tiny();
    let params = perturbed_params(&cfg, 21);
    let sched = cosine_schedule(1000, 0.008).unwrap();
    let (x0a, x0b) = (random_field(2, 2, 1, 0.4), random_field(2, 2, 2, 0.4));
    let (ma, mb) = (random_mask(2, 1), random_mask(2, 2));
    let batch = [
        TrainExample {
            x0: &x0a,
            mask: &ma,
            cond: Conditioning::new(0.62, 0).unwrap(),
        },
        TrainExample {
            x0: &x0b,
            mask: &mb,
            cond: Conditioning::new(0.81, 1).unwrap(),
        },
    ];
    let steps = [120, 640];
    let noise = [random_field(2, 2, 3, 1.0), random_field(2, 2, 4, 1.0)];

    let base: Vec<Mat<f64>> = params.cast();
    let loss_at = |vals: &[Mat<f64>]| {
        loss_and_grad_with(vals, &cfg, &params.layout, &batch, &steps, &noise, &sched)
            .unwrap()
            .0
    };
    let (_, grads) =
        loss_and_grad_with(&base, &cfg, &params.layout, &batch, &steps, &noise, &sched).unwrap();

    // group -> (Σ (fd - an)², Σ fd², Σ an², entries)
    let mut sums: BTreeMap<&'static str, (f64, f64, f64, usize)> = BTreeMap::new();
    let mut r = rng::stream(5, 0, 0);
    for (idx, spec) in params.specs().iter().enumerate() {
        let n = base[idx].data.len();
        let picks: Vec<usize> = if n <= ENTRIES_PER_ARRAY {
            (0..n).collect()
        } else {
            (0..ENTRIES_PER_ARRAY)
                .map(|_| rand::Rng::gen_range(&mut r, 0..n))
                .collect()
        };
        for j in picks {
            let mut plus = base.clone();
            plus[idx].data[j] += FD_STEP;
            let mut minus = base.clone();
            minus[idx].data[j] -= FD_STEP;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * FD_STEP);
            let an = grads[idx].data[j];
            let e = sums.entry(spec.group()).or_default();
            e.0 += (fd - an).powi(2);
            e.1 += fd * fd;
            e.2 += an * an;
            e.3 += 1;
        }
    }
    sums.into_iter()
        .map(|(name, (diff, fd, an, entries))| {
            let rel_err = diff.sqrt() / fd.sqrt().max(an.sqrt()).max(1e-12);
            (
                name,
                GroupCheck {
                    entries,
                    rel_err,
                    grad_norm: an.sqrt(),
                },
            )
        })
        .collect()
}
