//! Noise schedules, forward corruption, velocity parameterization and the
//! ancestral samplers.
//!
//! Steps are 1-based: `t = 1..=T`, with `alpha_bar(0) = 1`.
//!
//! Random draws come from [`crate::rng::stream`] keyed by `(seed, lane,
//! step)`: lane is the sample index, step 0 holds the initial noise and step
//! `t >= 2` the noise added when leaving `x_t`.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::nn::{denoiser_forward_batch, Conditioning, DenoiserParams, ForwardInput};
use crate::rng;

/// Cumulative products and derived coefficients of a variance schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

impl NoiseSchedule {
    /// Builds a schedule from per-step betas, `betas[t-1] = β_t`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::range("schedule length", 0, ">= 1"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b <= MAX_BETA)) {
            return Err(Error::range("beta", b, format!("(0, {MAX_BETA}]")));
        }
        let mut alpha_bar = Vec::with_capacity(betas.len() + 1);
        alpha_bar.push(1.0);
        for b in &betas {
            let prev = *alpha_bar.last().unwrap();
            alpha_bar.push(prev * (1.0 - b));
        }
        Ok(NoiseSchedule { betas, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `β_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `ᾱ_t` for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn sqrt_alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t].sqrt()
    }

    pub fn sqrt_one_minus_alpha_bar(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }

    /// Fixed reverse variance `β̃_t = β_t·(1 − ᾱ_{t−1})/(1 − ᾱ_t)`.
    pub fn posterior_var(&self, t: usize) -> f64 {
        self.beta(t) * (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t])
    }

    /// Coefficients `(c_x0, c_xt)` of the posterior mean of `q(x_{t−1} | x_t, x_0)`.
    pub fn posterior_mean_coefs(&self, t: usize) -> (f64, f64) {
        let (ab, ab_prev, b) = (self.alpha_bar[t], self.alpha_bar[t - 1], self.beta(t));
        let c0 = b * ab_prev.sqrt() / (1.0 - ab);
        let ct = (1.0 - ab_prev) * (1.0 - b).sqrt() / (1.0 - ab);
        (c0, ct)
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::range(
                "timestep",
                t,
                format!("[1, {}]", self.steps()),
            ));
        }
        Ok(())
    }
}

/// Cosine schedule: `ᾱ_t = f(t)/f(0)` with
/// `f(t) = cos²(((t/T + s)/(1 + s))·π/2)`; betas are clipped at 0.999 and
/// `ᾱ` recomputed from the clipped betas.
pub fn cosine_schedule(steps: usize, s: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::range("schedule length", steps, ">= 1"));
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::range("cosine offset", s, "> 0"));
    }
    let f = |t: usize| {
        let x = ((t as f64 / steps as f64 + s) / (1.0 + s)) * FRAC_PI_2;
        x.cos().powi(2)
    };
    let f0 = f(0);
    let closed: Vec<f64> = (0..=steps).map(|t| f(t) / f0).collect();
    let betas = (1..=steps)
        .map(|t| (1.0 - closed[t] / closed[t - 1]).min(MAX_BETA))
        .collect();
    NoiseSchedule::from_betas(betas)
}

/// Closed-form forward marginal `√ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
pub fn q_sample(
    x0: &FeatureMap,
    t: usize,
    eps: &FeatureMap,
    sched: &NoiseSchedule,
) -> Result<FeatureMap> {
    if t > sched.steps() {
        return Err(Error::range(
            "timestep",
            t,
            format!("[0, {}]", sched.steps()),
        ));
    }
    x0.axpby(
        sched.sqrt_alpha_bar(t) as f32,
        eps,
        sched.sqrt_one_minus_alpha_bar(t) as f32,
    )
}

/// Velocity target `√ᾱ_t·ε − √(1−ᾱ_t)·x0`.
pub fn v_target(
    x0: &FeatureMap,
    eps: &FeatureMap,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<FeatureMap> {
    if t > sched.steps() {
        return Err(Error::range(
            "timestep",
            t,
            format!("[0, {}]", sched.steps()),
        ));
    }
    eps.axpby(
        sched.sqrt_alpha_bar(t) as f32,
        x0,
        -(sched.sqrt_one_minus_alpha_bar(t) as f32),
    )
}

/// `x̂0 = √ᾱ_t·x_t − √(1−ᾱ_t)·v̂`, without clamping.
pub fn predict_x0_from_v_unclamped(
    x_t: &FeatureMap,
    v_hat: &FeatureMap,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<FeatureMap> {
    x_t.axpby(
        sched.sqrt_alpha_bar(t) as f32,
        v_hat,
        -(sched.sqrt_one_minus_alpha_bar(t) as f32),
    )
}

/// `x̂0` clamped to the normalized data range `[−1, 1]`.
pub fn predict_x0_from_v(
    x_t: &FeatureMap,
    v_hat: &FeatureMap,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<FeatureMap> {
    Ok(predict_x0_from_v_unclamped(x_t, v_hat, t, sched)?.map(|x| x.clamp(-1.0, 1.0)))
}

/// `ε̂ = √(1−ᾱ_t)·x_t + √ᾱ_t·v̂`.
pub fn predict_eps_from_v(
    x_t: &FeatureMap,
    v_hat: &FeatureMap,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<FeatureMap> {
    x_t.axpby(
        sched.sqrt_one_minus_alpha_bar(t) as f32,
        v_hat,
        sched.sqrt_alpha_bar(t) as f32,
    )
}

/// One ancestral step on raw values. `noise` supplies standard normal draws
/// and is only consulted when `t > 1`.
pub fn reverse_step_values(
    x_t: &[f32],
    v_hat: &[f32],
    t: usize,
    sched: &NoiseSchedule,
    noise: Option<&[f32]>,
) -> Vec<f32> {
    let (sa, s1a) = (sched.sqrt_alpha_bar(t), sched.sqrt_one_minus_alpha_bar(t));
    let (c0, ct) = sched.posterior_mean_coefs(t);
    let sd = if t > 1 {
        sched.posterior_var(t).sqrt()
    } else {
        0.0
    };
    x_t.iter()
        .zip(v_hat)
        .enumerate()
        .map(|(i, (&x, &v))| {
            let (x, v) = (x as f64, v as f64);
            let x0 = (sa * x - s1a * v).clamp(-1.0, 1.0);
            let mut mu = c0 * x0 + ct * x;
            if t > 1 {
                if let Some(z) = noise {
                    mu += sd * z[i] as f64;
                }
            }
            mu as f32
        })
        .collect()
}

/// Ancestral step `x_t → x_{t−1}` with fixed posterior variance. At `t = 1`
/// the posterior mean is returned without noise.
pub fn reverse_step<R: rand::Rng + ?Sized>(
    x_t: &FeatureMap,
    v_hat: &FeatureMap,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<FeatureMap> {
    sched.check_step(t)?;
    x_t.same_shape(v_hat)?;
    let noise = (t > 1).then(|| rng::normal_vec(rng, x_t.data().len()));
    let out = reverse_step_values(x_t.data(), v_hat.data(), t, sched, noise.as_deref());
    FeatureMap::new(x_t.order(), x_t.channels(), out)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Noise level reconstructions start from.
    pub t_noise: usize,
    pub n_samples: usize,
    pub rng_seed: u64,
    /// Ancestral sampling; when false the reverse chain follows the
    /// posterior mean without injected noise.
    pub stochastic: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            t_noise: 500,
            n_samples: 10,
            rng_seed: 0,
            stochastic: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.t_noise == 0 || self.t_noise > sched.steps() {
            return Err(Error::range(
                "t_noise",
                self.t_noise,
                format!("[1, {}]", sched.steps()),
            ));
        }
        if self.n_samples == 0 {
            return Err(Error::range("n_samples", 0, ">= 1"));
        }
        Ok(())
    }
}

/// Runs the reverse chain from `x_start` at step `t_start` down to 0.
/// Step `t` draws its noise from stream `(seed, lane, t)`.
#[allow(clippy::too_many_arguments)]
pub fn denoise_from(
    x_start: FeatureMap,
    t_start: usize,
    mask: &FeatureMap,
    cond: Conditioning,
    params: &DenoiserParams,
    sched: &NoiseSchedule,
    seed: u64,
    lane: u64,
    stochastic: bool,
) -> Result<FeatureMap> {
    let mut out = denoise_lanes(
        vec![x_start],
        t_start,
        mask,
        cond,
        params,
        sched,
        seed,
        &[lane],
        stochastic,
    )?;
    Ok(out.remove(0))
}

/// [`denoise_from`] for several chains in lockstep, one per lane. Each chain
/// gives the same result it would give on its own.
#[allow(clippy::too_many_arguments)]
pub fn denoise_lanes(
    x_start: Vec<FeatureMap>,
    t_start: usize,
    mask: &FeatureMap,
    cond: Conditioning,
    params: &DenoiserParams,
    sched: &NoiseSchedule,
    seed: u64,
    lanes: &[u64],
    stochastic: bool,
) -> Result<Vec<FeatureMap>> {
    if x_start.len() != lanes.len() {
        return Err(Error::Shape(format!(
            "{} chains vs {} lanes",
            x_start.len(),
            lanes.len()
        )));
    }
    if t_start > sched.steps() {
        return Err(Error::range(
            "start step",
            t_start,
            format!("[0, {}]", sched.steps()),
        ));
    }
    let mut xs = x_start;
    for t in (1..=t_start).rev() {
        let items: Vec<ForwardInput> = xs
            .iter()
            .map(|x_t| ForwardInput { x_t, mask, t, cond })
            .collect();
        let v_hats = denoiser_forward_batch(&items, params)?;
        let mut next_xs = Vec::with_capacity(xs.len());
        for ((x, v_hat), &lane) in xs.iter().zip(&v_hats).zip(lanes) {
            let noise = (stochastic && t > 1)
                .then(|| rng::normal_vec(&mut rng::stream(seed, lane, t as u64), x.data().len()));
            let next = reverse_step_values(x.data(), v_hat.data(), t, sched, noise.as_deref());
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite sample at step {t} (lane {lane})"
                )));
            }
            next_xs.push(FeatureMap::new(x.order(), x.channels(), next)?);
        }
        xs = next_xs;
    }
    Ok(xs)
}

/// Generates a map from pure noise: `x_T ~ N(0, I)` then `T` reverse steps.
pub fn sample_from_noise(
    mask: &FeatureMap,
    cond: Conditioning,
    params: &DenoiserParams,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<FeatureMap> {
    let cfg = &params.config;
    let v = crate::mesh::prefix_count(cfg.base_order);
    let x_t = FeatureMap::new(
        cfg.base_order,
        cfg.out_channels,
        rng::normal_vec(&mut rng::stream(seed, 0, 0), cfg.out_channels * v),
    )?;
    denoise_from(x_t, sched.steps(), mask, cond, params, sched, seed, 0, true)
}

/// Partial-noise reconstruction: each of `n_samples` draws fresh noise,
/// corrupts `x0_obs` to `t_noise` and denoises back. Sample `i` uses lane
/// `i`; the chains run batched in lockstep.
pub fn reconstruct(
    x0_obs: &FeatureMap,
    mask: &FeatureMap,
    cond: Conditioning,
    params: &DenoiserParams,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<Vec<FeatureMap>> {
    cfg.validate(sched)?;
    let lanes: Vec<u64> = (0..cfg.n_samples as u64).collect();
    let starts = lanes
        .iter()
        .map(|&lane| {
            let eps = FeatureMap::new(
                x0_obs.order(),
                x0_obs.channels(),
                rng::normal_vec(&mut rng::stream(cfg.rng_seed, lane, 0), x0_obs.data().len()),
            )?;
            q_sample(x0_obs, cfg.t_noise, &eps, sched)
        })
        .collect::<Result<Vec<_>>>()?;
    denoise_lanes(
        starts,
        cfg.t_noise,
        mask,
        cond,
        params,
        sched,
        cfg.rng_seed,
        &lanes,
        cfg.stochastic,
    )
}
