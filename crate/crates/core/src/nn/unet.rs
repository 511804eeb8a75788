//! The conditional spherical UNet and its training loss.
//!
//! Layout: input concat (features ‖ one-hot mask) → 1-ring conv → encoder
//! levels (ResBlocks, optional attention, pool) → bottleneck (ResBlock,
//! attention, ResBlock) → decoder levels (concat skip, ResBlocks, optional
//! attention, unpool + conv) → GroupNorm/SiLU → zero-initialized output conv.
//!
//! The summed time and condition embedding passes through a shared
//! two-layer MLP and is injected into every ResBlock as a per-channel bias.

use std::sync::Arc;

use rayon::prelude::*;

use crate::diffusion::{q_sample, v_target, NoiseSchedule};
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::mesh::{shared_icosphere, Icosphere};

use super::ops::time_embedding;
use super::params::{AttnIdx, DenoiserConfig, DenoiserParams, Layout, NormIdx, ResBlockIdx};
use super::tape::{Tape, Var};
use super::tensor::{Mat, Real};

/// Demographic conditioning of one subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conditioning {
    /// Age divided by 100, in `[0, 1]`.
    pub age_scaled: f64,
    /// 0 or 1.
    pub gender: u8,
}

impl Conditioning {
    pub fn new(age_scaled: f64, gender: u8) -> Result<Self> {
        let c = Conditioning { age_scaled, gender };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.age_scaled) {
            return Err(Error::range("scaled age", self.age_scaled, "[0, 1]"));
        }
        if self.gender > 1 {
            return Err(Error::range("gender", self.gender, "{0, 1}"));
        }
        Ok(())
    }
}

pub(crate) fn load_meshes(cfg: &DenoiserConfig) -> Result<Vec<Arc<Icosphere>>> {
    (cfg.min_order..=cfg.base_order)
        .map(shared_icosphere)
        .collect()
}

struct Net<'t, 'a, T: Real> {
    tape: &'t mut Tape<'a, T>,
}

impl<T: Real> Net<'_, '_, T> {
    fn norm(&mut self, x: Var, n: &NormIdx) -> Var {
        let (g, b) = (self.tape.param(n.gamma), self.tape.param(n.beta));
        self.tape.group_norm(x, g, b, n.groups)
    }

    fn conv(&mut self, x: Var, w: usize, b: usize, order: usize) -> Var {
        let (w, b) = (self.tape.param(w), self.tape.param(b));
        self.tape.ring_conv(x, w, b, order)
    }

    fn dense(&mut self, x: Var, w: usize, b: Option<usize>) -> Var {
        let w = self.tape.param(w);
        let b = b.map(|b| self.tape.param(b));
        self.tape.linear(x, w, b)
    }

    fn res_block(&mut self, x: Var, blk: &ResBlockIdx, emb: Var, order: usize) -> Var {
        let h = self.norm(x, &blk.norm1);
        let h = self.tape.silu(h);
        let h = self.conv(h, blk.conv1.w, blk.conv1.b, order);
        // Injected after the norm: a per-channel shift ahead of GroupNorm
        // would be removed again whenever a group holds a single channel.
        let h = self.norm(h, &blk.norm2);
        let bias = self.dense(emb, blk.emb_w, Some(blk.emb_b));
        let h = self.tape.add_bias(h, bias);
        let h = self.tape.silu(h);
        let h = self.conv(h, blk.conv2.w, blk.conv2.b, order);
        let skip = match blk.skip {
            Some((w, b)) => self.dense(x, w, Some(b)),
            None => x,
        };
        self.tape.add(skip, h)
    }

    fn attention(&mut self, x: Var, a: &AttnIdx) -> Var {
        let n = self.norm(x, &a.norm);
        let q = self.dense(n, a.q, None);
        let k = self.dense(n, a.k, None);
        let v = self.dense(n, a.v, None);
        let o = self.tape.attention(q, k, v);
        let o = self.dense(o, a.out_w, Some(a.out_b));
        self.tape.add(x, o)
    }

    fn condition(&mut self, layout: &Layout, conds: &[Conditioning]) -> Var {
        let table = self.tape.param(layout.gender_table);
        let genders: Vec<usize> = conds.iter().map(|c| c.gender as usize).collect();
        let g = self.tape.embed_rows(table, &genders);
        let (w, b) = (self.tape.param(layout.age_w), self.tape.param(layout.age_b));
        let ages: Vec<f64> = conds.iter().map(|c| c.age_scaled).collect();
        let a = self.tape.scalar_affine(w, b, &ages);
        let a = self.tape.silu(a);
        self.tape.add(g, a)
    }
}

/// One map to denoise: noisy features, mask, step and conditioning.
#[derive(Debug, Clone, Copy)]
pub struct ForwardInput<'a> {
    pub x_t: &'a FeatureMap,
    pub mask: &'a FeatureMap,
    pub t: usize,
    pub cond: Conditioning,
}

/// Records one forward pass over `items`, stacked along the vertex axis
/// of a tape whose batch equals `items.len()`.
pub(crate) fn record_forward<T: Real>(
    tape: &mut Tape<'_, T>,
    cfg: &DenoiserConfig,
    layout: &Layout,
    items: &[ForwardInput<'_>],
) -> Result<Var> {
    assert_eq!(tape.batch(), items.len(), "tape batch vs items");
    let mut net = Net { tape };
    let v = crate::mesh::prefix_count(cfg.base_order);
    let b = items.len();
    let mut input = Mat::<T>::zeros(cfg.in_channels, b * v);
    for (j, it) in items.iter().enumerate() {
        for c in 0..cfg.out_channels {
            for (o, &x) in input.row_mut(c)[j * v..(j + 1) * v]
                .iter_mut()
                .zip(it.x_t.channel(c))
            {
                *o = T::lit(x as f64);
            }
        }
        if cfg.use_mask {
            for c in 0..it.mask.channels() {
                let row = input.row_mut(cfg.out_channels + c);
                for (o, &x) in row[j * v..(j + 1) * v].iter_mut().zip(it.mask.channel(c)) {
                    *o = T::lit(x as f64);
                }
            }
        }
    }
    let x = net.tape.input(input);

    let mut temb = Mat::<T>::zeros(cfg.embed_dim, b);
    for (j, it) in items.iter().enumerate() {
        for (i, e) in time_embedding(it.t, cfg.embed_dim)?.into_iter().enumerate() {
            temb.data[i * b + j] = T::lit(e);
        }
    }
    let temb = net.tape.input(temb);
    let conds: Vec<Conditioning> = items.iter().map(|it| it.cond).collect();
    let c = net.condition(layout, &conds);
    let e = net.tape.add(temb, c);
    let e = net.dense(e, layout.time_w1, Some(layout.time_b1));
    let e = net.tape.silu(e);
    let e = net.dense(e, layout.time_w2, Some(layout.time_b2));
    let emb = net.tape.silu(e);

    let mut h = net.conv(x, layout.input_conv.w, layout.input_conv.b, cfg.base_order);
    let mut skips = Vec::with_capacity(layout.encoder.len());
    for (l, level) in layout.encoder.iter().enumerate() {
        for blk in &level.blocks {
            h = net.res_block(h, blk, emb, level.order);
        }
        if let Some(a) = &level.attn {
            h = net.attention(h, a);
        }
        skips.push(h);
        if l + 1 < layout.encoder.len() {
            h = net.tape.pool(h);
        }
    }

    let (m0, ma, m1) = &layout.mid;
    h = net.res_block(h, m0, emb, cfg.min_order);
    h = net.attention(h, ma);
    h = net.res_block(h, m1, emb, cfg.min_order);

    for level in &layout.decoder {
        let l = cfg.base_order - level.order;
        h = net.tape.concat(h, skips[l]);
        for blk in &level.blocks {
            h = net.res_block(h, blk, emb, level.order);
        }
        if let Some(a) = &level.attn {
            h = net.attention(h, a);
        }
        if let Some(up) = &level.up {
            h = net.tape.unpool(h);
            h = net.conv(h, up.w, up.b, level.order + 1);
        }
    }

    h = net.norm(h, &layout.out_norm);
    h = net.tape.silu(h);
    Ok(net.conv(h, layout.out_conv.w, layout.out_conv.b, cfg.base_order))
}

fn check_inputs(
    cfg: &DenoiserConfig,
    x_t: &FeatureMap,
    mask: &FeatureMap,
    cond: Conditioning,
) -> Result<()> {
    cond.validate()?;
    if x_t.order() != cfg.base_order || mask.order() != cfg.base_order {
        return Err(Error::Shape(format!(
            "inputs at orders {}/{}, network expects {}",
            x_t.order(),
            mask.order(),
            cfg.base_order
        )));
    }
    if x_t.channels() != cfg.out_channels || x_t.channels() + mask.channels() != cfg.in_channels {
        return Err(Error::Shape(format!(
            "{} feature + {} mask channels, network expects {} in / {} out",
            x_t.channels(),
            mask.channels(),
            cfg.in_channels,
            cfg.out_channels
        )));
    }
    if cfg.use_mask {
        check_one_hot(mask)?;
    }
    Ok(())
}

/// Learned embedding of `(age, gender)`: a gender table row plus
/// `SiLU(w·age + b)`. Added to the time embedding inside the network.
pub fn condition_embedding(cond: Conditioning, params: &DenoiserParams) -> Result<Vec<f32>> {
    cond.validate()?;
    let meshes = load_meshes(&params.config)?;
    let mut tape = Tape::new(&params.values, &meshes);
    let out = Net { tape: &mut tape }.condition(&params.layout, &[cond]);
    Ok(tape.value(out).data.clone())
}

/// Every vertex must carry exactly one active mask channel.
pub fn check_one_hot(mask: &FeatureMap) -> Result<()> {
    for v in 0..mask.vertex_count() {
        let mut sum = 0.0;
        for c in 0..mask.channels() {
            let x = mask.channel(c)[v];
            if x != 0.0 && x != 1.0 {
                return Err(Error::Invalid(format!(
                    "mask value {x} at vertex {v} is not 0/1"
                )));
            }
            sum += x;
        }
        if sum != 1.0 {
            return Err(Error::Invalid(format!("mask is not one-hot at vertex {v}")));
        }
    }
    Ok(())
}

/// Predicted velocity for a noisy map `x_t` at step `t`.
pub fn denoiser_forward(
    x_t: &FeatureMap,
    mask: &FeatureMap,
    t: usize,
    cond: Conditioning,
    params: &DenoiserParams,
) -> Result<FeatureMap> {
    let mut out = denoiser_forward_batch(&[ForwardInput { x_t, mask, t, cond }], params)?;
    Ok(out.remove(0))
}

/// Predicted velocities for several maps in one pass. Equivalent to calling
/// [`denoiser_forward`] on each item, but cheaper.
pub fn denoiser_forward_batch(
    items: &[ForwardInput<'_>],
    params: &DenoiserParams,
) -> Result<Vec<FeatureMap>> {
    let cfg = &params.config;
    if items.is_empty() {
        return Ok(Vec::new());
    }
    for it in items {
        check_inputs(cfg, it.x_t, it.mask, it.cond)?;
    }
    let meshes = load_meshes(cfg)?;
    let mut tape = Tape::with_batch(&params.values, &meshes, items.len());
    let out = record_forward(&mut tape, cfg, &params.layout, items)?;
    unstack(tape.value(out), items.len(), cfg.base_order)
}

/// Splits a `C × (n·V)` matrix into `n` maps.
fn unstack<T: Real>(m: &Mat<T>, n: usize, order: usize) -> Result<Vec<FeatureMap>> {
    let v = m.cols / n;
    (0..n)
        .map(|j| {
            let mut data = Vec::with_capacity(m.rows * v);
            for c in 0..m.rows {
                data.extend(
                    m.row(c)[j * v..(j + 1) * v]
                        .iter()
                        .map(|x| x.to_f32().unwrap()),
                );
            }
            FeatureMap::new(order, m.rows, data)
        })
        .collect()
}

/// One training example in model space.
#[derive(Debug, Clone, Copy)]
pub struct TrainExample<'a> {
    pub x0: &'a FeatureMap,
    pub mask: &'a FeatureMap,
    pub cond: Conditioning,
}

/// Items per tape in [`loss_and_grad`]. Fixed so that results do not depend
/// on the worker count.
pub const SUB_BATCH: usize = 4;

/// Mean squared v-prediction error over batch, channels and vertices, with
/// exact gradients for every parameter array.
///
/// The batch is split into sub-batches of [`SUB_BATCH`] items, evaluated in
/// parallel and reduced in order.
pub fn loss_and_grad(
    batch: &[TrainExample<'_>],
    steps: &[usize],
    noise: &[FeatureMap],
    sched: &NoiseSchedule,
    params: &DenoiserParams,
) -> Result<(f64, Vec<Mat<f32>>)> {
    loss_and_grad_with(
        &params.values,
        &params.config,
        &params.layout,
        batch,
        steps,
        noise,
        sched,
    )
}

/// [`loss_and_grad`] in an arbitrary float type; `values` must follow
/// `layout`.
pub fn loss_and_grad_with<T: Real>(
    values: &[Mat<T>],
    cfg: &DenoiserConfig,
    layout: &Layout,
    batch: &[TrainExample<'_>],
    steps: &[usize],
    noise: &[FeatureMap],
    sched: &NoiseSchedule,
) -> Result<(f64, Vec<Mat<T>>)> {
    if batch.is_empty() || batch.len() != steps.len() || batch.len() != noise.len() {
        return Err(Error::Shape(format!(
            "batch {}, steps {}, noise {}",
            batch.len(),
            steps.len(),
            noise.len()
        )));
    }
    let meshes = load_meshes(cfg)?;
    let denom = (batch.len() * cfg.out_channels * crate::mesh::prefix_count(cfg.base_order)) as f64;

    for ex in batch {
        check_inputs(cfg, ex.x0, ex.mask, ex.cond)?;
    }
    let idx: Vec<usize> = (0..batch.len()).collect();
    let per_item: Vec<Result<(f64, Vec<Mat<T>>)>> = idx
        .par_chunks(SUB_BATCH)
        .map(|chunk| {
            let mut x_ts = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            for &i in chunk {
                x_ts.push(q_sample(batch[i].x0, steps[i], &noise[i], sched)?);
                targets.push(v_target(batch[i].x0, &noise[i], steps[i], sched)?);
            }
            let items: Vec<ForwardInput> = chunk
                .iter()
                .zip(&x_ts)
                .map(|(&i, x_t)| ForwardInput {
                    x_t,
                    mask: batch[i].mask,
                    t: steps[i],
                    cond: batch[i].cond,
                })
                .collect();
            let mut tape = Tape::with_batch(values, &meshes, chunk.len());
            let out = record_forward(&mut tape, cfg, layout, &items)?;
            let pred = tape.value(out);
            let v = pred.cols / chunk.len();
            let mut sq = 0.0f64;
            let mut seed = Mat::zeros(pred.rows, pred.cols);
            for (j, target) in targets.iter().enumerate() {
                for c in 0..pred.rows {
                    let p = &pred.row(c)[j * v..(j + 1) * v];
                    let o = &mut seed.row_mut(c)[j * v..(j + 1) * v];
                    for ((o, &p), &y) in o.iter_mut().zip(p).zip(target.channel(c)) {
                        let d = p.to_f64().unwrap() - y as f64;
                        sq += d * d;
                        *o = T::lit(2.0 * d / denom);
                    }
                }
            }
            if !sq.is_finite() {
                let ts: Vec<usize> = chunk.iter().map(|&i| steps[i]).collect();
                return Err(Error::Numerical(format!("non-finite loss at steps {ts:?}")));
            }
            Ok((sq / denom, tape.backward(out, seed)))
        })
        .collect();

    let mut loss = 0.0;
    let mut grads: Option<Vec<Mat<T>>> = None;
    for item in per_item {
        let (l, g) = item?;
        loss += l;
        match &mut grads {
            None => grads = Some(g),
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
        }
    }
    let grads = grads.expect("non-empty batch");
    if let Some(bad) = grads
        .iter()
        .position(|g| g.data.iter().any(|x| !x.is_finite()))
    {
        return Err(Error::Numerical(format!(
            "non-finite gradient in {}",
            layout.specs[bad].name
        )));
    }
    Ok((loss, grads))
}
