//! Reverse-mode differentiation over the small operator set the spherical
//! UNet needs.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed, never copied. [`Tape::backward`] walks the records in reverse
//! and returns one gradient matrix per parameter.

use crate::mesh::{prefix_count, Icosphere, RING_LEN};

use super::tensor::{matmul, Mat, Real};

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const NORM_EPS: f64 = 1e-5;

enum Op {
    Input,
    Param(usize),
    RingConv {
        x: Var,
        w: Var,
        b: Var,
        order: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        rstd: Vec<f64>,
    },
    Silu {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Pool {
        x: Var,
    },
    Unpool {
        x: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        probs: Vec<Mat<f64>>,
    },
    EmbedRows {
        table: Var,
        rows: Vec<usize>,
    },
    ScalarAffine {
        w: Var,
        b: Var,
        s: Vec<f64>,
    },
}

struct Node<T> {
    value: Option<Mat<T>>,
    op: Op,
    needs_grad: bool,
}

/// Meshes a tape may convolve on, indexed by order.
pub trait RingSource: Sync {
    fn rings(&self, order: usize) -> &[[u32; RING_LEN]];
}

impl RingSource for Vec<std::sync::Arc<Icosphere>> {
    fn rings(&self, order: usize) -> &[[u32; RING_LEN]] {
        let mesh = self
            .iter()
            .find(|m| m.order() == order)
            .unwrap_or_else(|| panic!("no mesh of order {order} loaded"));
        mesh.rings()
    }
}

pub struct Tape<'a, T: Real> {
    params: &'a [Mat<T>],
    meshes: &'a dyn RingSource,
    nodes: Vec<Node<T>>,
    batch: usize,
}

fn im2col<T: Real>(x: &Mat<T>, rings: &[[u32; RING_LEN]], batch: usize) -> Mat<T> {
    let v = rings.len();
    debug_assert_eq!(x.cols, v * batch);
    let mut data = Vec::with_capacity(x.rows * RING_LEN * x.cols);
    for i in 0..x.rows {
        let src = x.row(i);
        for k in 0..RING_LEN {
            for blk in src.chunks_exact(v) {
                if k == 0 {
                    data.extend_from_slice(blk);
                } else {
                    data.extend(rings.iter().map(|r| blk[r[k - 1] as usize]));
                }
            }
        }
    }
    Mat::from_vec(x.rows * RING_LEN, x.cols, data)
}

fn col2im_acc<T: Real>(dcols: &Mat<T>, rings: &[[u32; RING_LEN]], dx: &mut Mat<T>) {
    let v = rings.len();
    for i in 0..dx.rows {
        let dst = dx.row_mut(i);
        for k in 0..RING_LEN {
            let src = dcols.row(i * RING_LEN + k);
            for (d, s) in dst.chunks_exact_mut(v).zip(src.chunks_exact(v)) {
                if k == 0 {
                    d.iter_mut().zip(s).for_each(|(a, &b)| *a += b);
                } else {
                    for (r, &g) in rings.iter().zip(s) {
                        d[r[k - 1] as usize] += g;
                    }
                }
            }
        }
    }
}

/// Copies columns `[from, from + len)` of `m`.
fn columns<T: Real>(m: &Mat<T>, from: usize, len: usize) -> Mat<T> {
    let mut data = Vec::with_capacity(m.rows * len);
    for r in 0..m.rows {
        data.extend_from_slice(&m.row(r)[from..from + len]);
    }
    Mat::from_vec(m.rows, len, data)
}

fn add_columns<T: Real>(dst: &mut Mat<T>, from: usize, src: &Mat<T>) {
    for r in 0..src.rows {
        dst.row_mut(r)[from..from + src.cols]
            .iter_mut()
            .zip(src.row(r))
            .for_each(|(a, &b)| *a += b);
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new(params: &'a [Mat<T>], meshes: &'a dyn RingSource) -> Self {
        Self::with_batch(params, meshes, 1)
    }

    /// A tape whose spatial values stack `batch` maps side by side: a
    /// `C × (batch·V)` matrix holds map `b` in columns `b·V..(b+1)·V`.
    /// Vector values (embeddings) are `D × 1` or `D × batch`.
    pub fn with_batch(params: &'a [Mat<T>], meshes: &'a dyn RingSource, batch: usize) -> Self {
        assert!(batch >= 1, "batch size");
        Tape {
            params,
            meshes,
            nodes: Vec::with_capacity(256),
            batch,
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    fn block_len(&self, cols: usize) -> usize {
        assert_eq!(cols % self.batch, 0, "column count vs batch");
        cols / self.batch
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        match (&self.nodes[v.0].value, &self.nodes[v.0].op) {
            (Some(m), _) => m,
            (None, Op::Param(i)) => &self.params[*i],
            (None, _) => unreachable!("only parameters are stored by reference"),
        }
    }

    fn push(&mut self, value: Mat<T>, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Mat<T>) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Input,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, index: usize) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(index),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// 7-tap 1-ring convolution. `w` is `out × (in·7)`, `b` is `out × 1`.
    pub fn ring_conv(&mut self, x: Var, w: Var, b: Var, order: usize) -> Var {
        let xv = self.value(x);
        let rings = self.meshes.rings(order);
        assert_eq!(
            self.block_len(xv.cols),
            prefix_count(order),
            "ring_conv: vertex count vs order"
        );
        assert_eq!(
            self.value(w).cols,
            xv.rows * RING_LEN,
            "ring_conv: weight in-dim"
        );
        let cols = im2col(xv, rings, self.batch);
        let mut y = matmul(self.value(w), false, &cols, false);
        let bias = self.value(b);
        for c in 0..y.rows {
            let bc = bias.data[c];
            y.row_mut(c).iter_mut().for_each(|v| *v += bc);
        }
        self.push(y, Op::RingConv { x, w, b, order }, &[x, w, b])
    }

    /// Channel mixing `W·x (+ b)`; also serves as a dense layer on vectors.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let mut y = matmul(self.value(w), false, self.value(x), false);
        if let Some(b) = b {
            let bias = self.value(b);
            for c in 0..y.rows {
                let bc = bias.data[c];
                y.row_mut(c).iter_mut().for_each(|v| *v += bc);
            }
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(y, Op::Linear { x, w, b }, &parents)
    }

    /// Group normalization with statistics per group and per stacked map.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Var {
        let xv = self.value(x);
        let (c, cols) = (xv.rows, xv.cols);
        let v = self.block_len(cols);
        assert_eq!(c % groups, 0, "group_norm: channels divisible by groups");
        let per = c / groups;
        let (g, bt) = (self.value(gamma), self.value(beta));
        let mut y = Mat::zeros(c, cols);
        let mut rstds = Vec::with_capacity(groups * self.batch);
        for grp in 0..groups {
            for blk in 0..self.batch {
                let (mean, rstd) =
                    group_stats(xv, grp * per..(grp + 1) * per, blk * v..(blk + 1) * v);
                rstds.push(rstd);
                let (m, r) = (T::lit(mean), T::lit(rstd));
                for ch in grp * per..(grp + 1) * per {
                    let (gc, bc) = (g.data[ch], bt.data[ch]);
                    let src = &xv.row(ch)[blk * v..(blk + 1) * v];
                    for (o, &s) in y.row_mut(ch)[blk * v..(blk + 1) * v].iter_mut().zip(src) {
                        *o = (s - m) * r * gc + bc;
                    }
                }
            }
        }
        self.push(
            y,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                rstd: rstds,
            },
            &[x, gamma, beta],
        )
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let y = {
            let xv = self.value(x);
            Mat::from_vec(
                xv.rows,
                xv.cols,
                xv.data.iter().map(|&s| s * sigmoid(s)).collect(),
            )
        };
        self.push(y, Op::Silu { x }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.value(a).clone();
        assert!(y.same_shape(self.value(b)), "add: shape");
        y.add_assign(self.value(b));
        self.push(y, Op::Add { a, b }, &[a, b])
    }

    /// Adds a `C × 1` column to every vertex, or column `b` of a
    /// `C × batch` matrix to every vertex of map `b`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let mut y = self.value(x).clone();
        let bv = self.value(bias);
        assert_eq!(bv.rows, y.rows, "add_bias: channels");
        assert!(
            bv.cols == 1 || bv.cols == self.batch,
            "add_bias: bias columns"
        );
        let v = self.block_len(y.cols);
        for c in 0..y.rows {
            for (blk, chunk) in y.row_mut(c).chunks_exact_mut(v).enumerate() {
                let bc = bv.at(c, blk.min(bv.cols - 1));
                chunk.iter_mut().for_each(|v| *v += bc);
            }
        }
        self.push(y, Op::AddBias { x, bias }, &[x, bias])
    }

    /// Channel concatenation `[a; b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.cols, "concat: vertex count");
        let mut data = av.data.clone();
        data.extend_from_slice(&bv.data);
        let y = Mat::from_vec(av.rows + bv.rows, av.cols, data);
        self.push(y, Op::Concat { a, b }, &[a, b])
    }

    /// Keeps the first `prefix_count(order - 1)` vertices of each map.
    pub fn pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let v = self.block_len(xv.cols);
        let keep = coarser_count(v);
        let mut data = Vec::with_capacity(xv.rows * keep * self.batch);
        for c in 0..xv.rows {
            for blk in xv.row(c).chunks_exact(v) {
                data.extend_from_slice(&blk[..keep]);
            }
        }
        let y = Mat::from_vec(xv.rows, keep * self.batch, data);
        self.push(y, Op::Pool { x }, &[x])
    }

    /// Zero-extends each map to the next finer order.
    pub fn unpool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let v = self.block_len(xv.cols);
        let total = finer_count(v);
        let mut y = Mat::zeros(xv.rows, total * self.batch);
        for c in 0..xv.rows {
            for (dst, src) in y
                .row_mut(c)
                .chunks_exact_mut(total)
                .zip(xv.row(c).chunks_exact(v))
            {
                dst[..v].copy_from_slice(src);
            }
        }
        self.push(y, Op::Unpool { x }, &[x])
    }

    /// Single-head softmax attention over the vertices of each map:
    /// `out = v·softmax(qᵀk/√C)ᵀ`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let n = self.block_len(qv.cols);
        let scale = 1.0 / (qv.rows as f64).sqrt();
        let mut y = Mat::zeros(vv.rows, vv.cols);
        let mut all_probs = Vec::with_capacity(self.batch);
        for blk in 0..self.batch {
            let (qb, kb, vb) = (
                columns(qv, blk * n, n),
                columns(kv, blk * n, n),
                columns(vv, blk * n, n),
            );
            let scores = matmul(&qb, true, &kb, false);
            let mut probs = Mat::<f64>::zeros(n, n);
            let mut p_t = Mat::<T>::zeros(n, n);
            for i in 0..n {
                let row = scores.row(i);
                let max = row
                    .iter()
                    .fold(f64::NEG_INFINITY, |m, s| m.max(s.to_f64().unwrap() * scale));
                let mut sum = 0.0;
                let pr = probs.row_mut(i);
                for (p, s) in pr.iter_mut().zip(row) {
                    *p = (s.to_f64().unwrap() * scale - max).exp();
                    sum += *p;
                }
                for (p, out) in pr.iter_mut().zip(p_t.row_mut(i)) {
                    *p /= sum;
                    *out = T::lit(*p);
                }
            }
            add_columns(&mut y, blk * n, &matmul(&vb, false, &p_t, true));
            all_probs.push(probs);
        }
        self.push(
            y,
            Op::Attention {
                q,
                k,
                v,
                probs: all_probs,
            },
            &[q, k, v],
        )
    }

    /// Rows of a lookup table as columns: column `j` is `table[rows[j]]`.
    pub fn embed_rows(&mut self, table: Var, rows: &[usize]) -> Var {
        let tv = self.value(table);
        let mut y = Mat::zeros(tv.cols, rows.len());
        for (j, &r) in rows.iter().enumerate() {
            for (i, &x) in tv.row(r).iter().enumerate() {
                y.data[i * rows.len() + j] = x;
            }
        }
        self.push(
            y,
            Op::EmbedRows {
                table,
                rows: rows.to_vec(),
            },
            &[table],
        )
    }

    /// Column `j` is `w·s[j] + b` for column vectors `w`, `b`.
    pub fn scalar_affine(&mut self, w: Var, b: Var, s: &[f64]) -> Var {
        let y = {
            let (wv, bv) = (self.value(w), self.value(b));
            let mut y = Mat::zeros(wv.rows, s.len());
            for i in 0..wv.rows {
                for (o, &sj) in y.row_mut(i).iter_mut().zip(s) {
                    *o = wv.data[i] * T::lit(sj) + bv.data[i];
                }
            }
            y
        };
        self.push(
            y,
            Op::ScalarAffine {
                w,
                b,
                s: s.to_vec(),
            },
            &[w, b],
        )
    }

    /// Gradients of `Σ seed ⊙ output` with respect to every parameter.
    pub fn backward(&self, output: Var, seed: Mat<T>) -> Vec<Mat<T>> {
        let mut grads: Vec<Option<Mat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut param_grads: Vec<Mat<T>> = self
            .params
            .iter()
            .map(|p| Mat::zeros(p.rows, p.cols))
            .collect();
        assert!(self.value(output).same_shape(&seed), "backward: seed shape");
        grads[output.0] = Some(seed);

        fn acc<T: Real>(grads: &mut [Option<Mat<T>>], nodes: &[Node<T>], v: Var, g: Mat<T>) {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..self.nodes.len()).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(i) => param_grads[*i].add_assign(&gy),
                Op::RingConv { x, w, b, order } => {
                    let rings = self.meshes.rings(*order);
                    let xv = self.value(*x);
                    let cols = im2col(xv, rings, self.batch);
                    acc(&mut grads, &self.nodes, *w, matmul(&gy, false, &cols, true));
                    acc(&mut grads, &self.nodes, *b, Mat::column(gy.row_sums()));
                    if self.nodes[x.0].needs_grad {
                        let dcols = matmul(self.value(*w), true, &gy, false);
                        let mut dx = Mat::zeros(xv.rows, xv.cols);
                        col2im_acc(&dcols, rings, &mut dx);
                        acc(&mut grads, &self.nodes, *x, dx);
                    }
                }
                Op::Linear { x, w, b } => {
                    acc(
                        &mut grads,
                        &self.nodes,
                        *w,
                        matmul(&gy, false, self.value(*x), true),
                    );
                    if let Some(b) = b {
                        acc(&mut grads, &self.nodes, *b, Mat::column(gy.row_sums()));
                    }
                    if self.nodes[x.0].needs_grad {
                        acc(
                            &mut grads,
                            &self.nodes,
                            *x,
                            matmul(self.value(*w), true, &gy, false),
                        );
                    }
                }
                Op::GroupNorm {
                    x,
                    gamma,
                    beta,
                    groups,
                    rstd,
                } => {
                    let xv = self.value(*x);
                    let g = self.value(*gamma);
                    let (c, cols) = (xv.rows, xv.cols);
                    let v = self.block_len(cols);
                    let per = c / groups;
                    let n = (per * v) as f64;
                    let mut dgamma = vec![0.0f64; c];
                    let mut dbeta = vec![0.0f64; c];
                    let mut dx = Mat::zeros(c, cols);
                    for grp in 0..*groups {
                        for blk in 0..self.batch {
                            let r = rstd[grp * self.batch + blk];
                            let span = blk * v..(blk + 1) * v;
                            let (mean, _) =
                                group_stats(xv, grp * per..(grp + 1) * per, span.clone());
                            let (mut sum_dxh, mut sum_dxh_xh) = (0.0f64, 0.0f64);
                            for ch in grp * per..(grp + 1) * per {
                                let gc = g.data[ch].to_f64().unwrap();
                                for (&xs, &dys) in xv.row(ch)[span.clone()]
                                    .iter()
                                    .zip(&gy.row(ch)[span.clone()])
                                {
                                    let xh = (xs.to_f64().unwrap() - mean) * r;
                                    let dy = dys.to_f64().unwrap();
                                    dgamma[ch] += dy * xh;
                                    dbeta[ch] += dy;
                                    sum_dxh += dy * gc;
                                    sum_dxh_xh += dy * gc * xh;
                                }
                            }
                            for ch in grp * per..(grp + 1) * per {
                                let gc = g.data[ch].to_f64().unwrap();
                                let src = &xv.row(ch)[span.clone()];
                                let dys = &gy.row(ch)[span.clone()];
                                for ((o, &xs), &dy) in
                                    dx.row_mut(ch)[span.clone()].iter_mut().zip(src).zip(dys)
                                {
                                    let xh = (xs.to_f64().unwrap() - mean) * r;
                                    let dxh = dy.to_f64().unwrap() * gc;
                                    *o = T::lit(r / n * (n * dxh - sum_dxh - xh * sum_dxh_xh));
                                }
                            }
                        }
                    }
                    acc(
                        &mut grads,
                        &self.nodes,
                        *gamma,
                        Mat::column(dgamma.into_iter().map(T::lit).collect()),
                    );
                    acc(
                        &mut grads,
                        &self.nodes,
                        *beta,
                        Mat::column(dbeta.into_iter().map(T::lit).collect()),
                    );
                    acc(&mut grads, &self.nodes, *x, dx);
                }
                Op::Silu { x } => {
                    let xv = self.value(*x);
                    let dx = xv
                        .data
                        .iter()
                        .zip(&gy.data)
                        .map(|(&s, &g)| {
                            let sg = sigmoid(s);
                            g * sg * (T::one() + s * (T::one() - sg))
                        })
                        .collect();
                    acc(
                        &mut grads,
                        &self.nodes,
                        *x,
                        Mat::from_vec(xv.rows, xv.cols, dx),
                    );
                }
                Op::Add { a, b } => {
                    acc(&mut grads, &self.nodes, *a, gy.clone());
                    acc(&mut grads, &self.nodes, *b, gy);
                }
                Op::AddBias { x, bias } => {
                    let bcols = self.value(*bias).cols;
                    let v = self.block_len(gy.cols);
                    let mut db = Mat::zeros(gy.rows, bcols);
                    for c in 0..gy.rows {
                        for (blk, chunk) in gy.row(c).chunks_exact(v).enumerate() {
                            db.data[c * bcols + blk.min(bcols - 1)] += chunk.iter().copied().sum();
                        }
                    }
                    acc(&mut grads, &self.nodes, *bias, db);
                    acc(&mut grads, &self.nodes, *x, gy);
                }
                Op::Concat { a, b } => {
                    let ra = self.value(*a).rows;
                    let split = ra * gy.cols;
                    let ga = Mat::from_vec(ra, gy.cols, gy.data[..split].to_vec());
                    let gb = Mat::from_vec(gy.rows - ra, gy.cols, gy.data[split..].to_vec());
                    acc(&mut grads, &self.nodes, *a, ga);
                    acc(&mut grads, &self.nodes, *b, gb);
                }
                Op::Pool { x } => {
                    let xv = self.value(*x);
                    let (v, keep) = (self.block_len(xv.cols), self.block_len(gy.cols));
                    let mut dx = Mat::zeros(xv.rows, xv.cols);
                    for c in 0..xv.rows {
                        for (dst, src) in dx
                            .row_mut(c)
                            .chunks_exact_mut(v)
                            .zip(gy.row(c).chunks_exact(keep))
                        {
                            dst[..keep].copy_from_slice(src);
                        }
                    }
                    acc(&mut grads, &self.nodes, *x, dx);
                }
                Op::Unpool { x } => {
                    let xv = self.value(*x);
                    let (v, total) = (self.block_len(xv.cols), self.block_len(gy.cols));
                    let mut data = Vec::with_capacity(xv.data.len());
                    for c in 0..xv.rows {
                        for src in gy.row(c).chunks_exact(total) {
                            data.extend_from_slice(&src[..v]);
                        }
                    }
                    acc(
                        &mut grads,
                        &self.nodes,
                        *x,
                        Mat::from_vec(xv.rows, xv.cols, data),
                    );
                }
                Op::Attention { q, k, v, probs } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let n = self.block_len(qv.cols);
                    let scale = T::lit(1.0 / (qv.rows as f64).sqrt());
                    let mut dq = Mat::zeros(qv.rows, qv.cols);
                    let mut dk = Mat::zeros(kv.rows, kv.cols);
                    let mut dv = Mat::zeros(vv.rows, vv.cols);
                    for (blk, pb) in probs.iter().enumerate() {
                        let at = blk * n;
                        let (qb, kb, vb, gb) = (
                            columns(qv, at, n),
                            columns(kv, at, n),
                            columns(vv, at, n),
                            columns(&gy, at, n),
                        );
                        let p: Mat<T> = pb.cast();
                        // out[c,i] = Σ_j v[c,j]·P[i,j]
                        add_columns(&mut dv, at, &matmul(&gb, false, &p, false));
                        let dp = matmul(&gb, true, &vb, false);
                        let mut ds = Mat::zeros(n, n);
                        for i in 0..n {
                            let dot: T = p.row(i).iter().zip(dp.row(i)).map(|(&a, &b)| a * b).sum();
                            for ((o, &pi), &dpi) in
                                ds.row_mut(i).iter_mut().zip(p.row(i)).zip(dp.row(i))
                            {
                                *o = pi * (dpi - dot) * scale;
                            }
                        }
                        add_columns(&mut dq, at, &matmul(&kb, false, &ds, true));
                        add_columns(&mut dk, at, &matmul(&qb, false, &ds, false));
                    }
                    acc(&mut grads, &self.nodes, *v, dv);
                    acc(&mut grads, &self.nodes, *q, dq);
                    acc(&mut grads, &self.nodes, *k, dk);
                }
                Op::EmbedRows { table, rows } => {
                    let tv = self.value(*table);
                    let mut dt = Mat::zeros(tv.rows, tv.cols);
                    for (j, &r) in rows.iter().enumerate() {
                        for i in 0..tv.cols {
                            dt.data[r * tv.cols + i] += gy.at(i, j);
                        }
                    }
                    acc(&mut grads, &self.nodes, *table, dt);
                }
                Op::ScalarAffine { w, b, s } => {
                    let mut dw = vec![T::zero(); gy.rows];
                    for (i, d) in dw.iter_mut().enumerate() {
                        *d = gy
                            .row(i)
                            .iter()
                            .zip(s)
                            .map(|(&g, &sj)| g * T::lit(sj))
                            .sum();
                    }
                    acc(&mut grads, &self.nodes, *w, Mat::column(dw));
                    acc(&mut grads, &self.nodes, *b, Mat::column(gy.row_sums()));
                }
            }
        }
        param_grads
    }
}

/// Mean and reciprocal standard deviation over `channels × span`.
fn group_stats<T: Real>(
    x: &Mat<T>,
    channels: std::ops::Range<usize>,
    span: std::ops::Range<usize>,
) -> (f64, f64) {
    let n = (channels.len() * span.len()) as f64;
    let mut sum = 0.0;
    for ch in channels.clone() {
        sum += x.row(ch)[span.clone()]
            .iter()
            .map(|v| v.to_f64().unwrap())
            .sum::<f64>();
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for ch in channels {
        ss += x.row(ch)[span.clone()]
            .iter()
            .map(|v| {
                let d = v.to_f64().unwrap() - mean;
                d * d
            })
            .sum::<f64>();
    }
    (mean, 1.0 / (ss / n + NORM_EPS).sqrt())
}

fn coarser_count(v: usize) -> usize {
    let order = (0..=crate::mesh::MAX_ORDER)
        .find(|&o| prefix_count(o) == v)
        .expect("vertex count of an icosphere");
    assert!(order >= 1, "cannot pool an order-0 map");
    prefix_count(order - 1)
}

fn finer_count(v: usize) -> usize {
    let order = (0..crate::mesh::MAX_ORDER)
        .find(|&o| prefix_count(o) == v)
        .expect("vertex count of an icosphere below the maximum order");
    prefix_count(order + 1)
}
