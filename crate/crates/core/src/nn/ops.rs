//! Feature-map level entry points to the network's building blocks.

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::mesh::{prefix_count, Icosphere, RING_LEN};

use super::tape::{RingSource, Tape};
use super::tensor::{Mat, Real};

impl RingSource for Icosphere {
    fn rings(&self, order: usize) -> &[[u32; RING_LEN]] {
        assert_eq!(order, self.order(), "mesh order");
        self.rings()
    }
}

pub(crate) fn to_mat<T: Real>(x: &FeatureMap) -> Mat<T> {
    Mat::from_vec(
        x.channels(),
        x.vertex_count(),
        x.data().iter().map(|&v| T::from_f32(v).unwrap()).collect(),
    )
}

pub(crate) fn to_feature<T: Real>(m: &Mat<T>, order: usize) -> Result<FeatureMap> {
    FeatureMap::new(
        order,
        m.rows,
        m.data.iter().map(|v| v.to_f32().unwrap()).collect(),
    )
}

/// 1-ring convolution of `x` with `weights` laid out `out × in × 7` and a
/// per-output `bias`. Tap 0 is the vertex itself, taps 1..=6 follow the
/// ordered ring.
pub fn ring_conv(
    x: &FeatureMap,
    weights: &[f32],
    bias: &[f32],
    mesh: &Icosphere,
) -> Result<FeatureMap> {
    if x.order() != mesh.order() {
        return Err(Error::Shape(format!(
            "map order {} vs mesh order {}",
            x.order(),
            mesh.order()
        )));
    }
    let cin = x.channels();
    let cout = bias.len();
    if cout == 0 || weights.len() != cout * cin * RING_LEN {
        return Err(Error::Shape(format!(
            "weights have {} values, expected {cout}×{cin}×{RING_LEN}",
            weights.len()
        )));
    }
    let params = [
        Mat::from_vec(cout, cin * RING_LEN, weights.to_vec()),
        Mat::column(bias.to_vec()),
    ];
    let mut tape = Tape::new(&params, mesh);
    let xv = tape.input(to_mat(x));
    let (w, b) = (tape.param(0), tape.param(1));
    let y = tape.ring_conv(xv, w, b, mesh.order());
    to_feature(tape.value(y), x.order())
}

/// Keeps the vertices of the next coarser order.
pub fn pool(x: &FeatureMap, from_order: usize) -> Result<FeatureMap> {
    if x.order() != from_order || from_order == 0 {
        return Err(Error::Shape(format!(
            "cannot pool an order-{} map from order {from_order}",
            x.order()
        )));
    }
    let keep = prefix_count(from_order - 1);
    let data = (0..x.channels())
        .flat_map(|c| x.channel(c)[..keep].to_vec())
        .collect();
    FeatureMap::new(from_order - 1, x.channels(), data)
}

/// Zero-pads the vertices added by the next subdivision.
pub fn unpool(x: &FeatureMap, to_order: usize) -> Result<FeatureMap> {
    if to_order == 0 || x.order() + 1 != to_order || to_order > crate::mesh::MAX_ORDER {
        return Err(Error::Shape(format!(
            "cannot unpool an order-{} map to order {to_order}",
            x.order()
        )));
    }
    let total = prefix_count(to_order);
    let mut out = FeatureMap::zeros(to_order, x.channels());
    for c in 0..x.channels() {
        out.channel_mut(c)[..x.vertex_count()].copy_from_slice(x.channel(c));
    }
    debug_assert_eq!(out.vertex_count(), total);
    Ok(out)
}

/// Sinusoidal step embedding: `dim/2` sines followed by `dim/2` cosines of
/// `t·f_i`, with frequencies geometrically spaced from 1 down to 1/10000.
pub fn time_embedding(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::range("embedding dim", dim, "even and positive"));
    }
    let half = dim / 2;
    let freq = |i: usize| {
        if half == 1 {
            1.0
        } else {
            (-(10000f64.ln()) * i as f64 / (half - 1) as f64).exp()
        }
    };
    let t = t as f64;
    let mut out: Vec<f64> = (0..half).map(|i| (t * freq(i)).sin()).collect();
    out.extend((0..half).map(|i| (t * freq(i)).cos()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_icosphere;
    use crate::rng;

    /// Direct per-vertex summation, independent of the im2col/GEMM path.
    fn conv_oracle(x: &FeatureMap, w: &[f32], b: &[f32], mesh: &Icosphere) -> Vec<f64> {
        let (cin, cout, v) = (x.channels(), b.len(), x.vertex_count());
        let mut out = vec![0.0f64; cout * v];
        for c in 0..cout {
            for vert in 0..v {
                let ring = mesh.ordered_ring(vert).unwrap();
                let taps = [
                    vert as u32,
                    ring[0],
                    ring[1],
                    ring[2],
                    ring[3],
                    ring[4],
                    ring[5],
                ];
                let mut acc = b[c] as f64;
                for i in 0..cin {
                    for (k, &u) in taps.iter().enumerate() {
                        acc += w[(c * cin + i) * 7 + k] as f64 * x.channel(i)[u as usize] as f64;
                    }
                }
                out[c * v + vert] = acc;
            }
        }
        out
    }

    #[test]
    fn identity_filter() {
        let mesh = build_icosphere(2).unwrap();
        let x = FeatureMap::new(2, 2, rng::normal_vec(&mut rng::stream(1, 0, 0), 2 * 162)).unwrap();
        let mut w = vec![0.0; 2 * 2 * 7];
        w[0] = 1.0;
        w[(2 + 1) * 7] = 1.0;
        let y = ring_conv(&x, &w, &[0.0, 0.0], &mesh).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn averaging_keeps_constants() {
        let mesh = build_icosphere(1).unwrap();
        let x = FeatureMap::filled(1, 1, 3.0);
        let y = ring_conv(&x, &[1.0 / 7.0; 7], &[0.0], &mesh).unwrap();
        assert!(y.data().iter().all(|&v| (v - 3.0).abs() < 1e-6));
    }

    #[test]
    fn random_filter_matches_oracle() {
        let mesh = build_icosphere(1).unwrap();
        let mut r = rng::stream(11, 0, 0);
        let x = FeatureMap::new(1, 2, rng::normal_vec(&mut r, 2 * 42)).unwrap();
        let w = rng::normal_vec(&mut r, 3 * 2 * 7);
        let b = rng::normal_vec(&mut r, 3);
        let y = ring_conv(&x, &w, &b, &mesh).unwrap();
        for (a, e) in y.data().iter().zip(conv_oracle(&x, &w, &b, &mesh)) {
            assert!((*a as f64 - e).abs() < 1e-6 * (1.0 + e.abs()));
        }
    }

    #[test]
    fn conv_shape_errors() {
        let mesh = build_icosphere(1).unwrap();
        let x = FeatureMap::zeros(1, 2);
        assert!(ring_conv(&x, &[0.0; 7], &[0.0], &mesh).is_err());
        assert!(ring_conv(&FeatureMap::zeros(0, 1), &[0.0; 7], &[0.0], &mesh).is_err());
    }

    #[test]
    fn pool_slices_and_unpool_zero_extends() {
        let x = FeatureMap::from_fn(1, 2, |c, v| (c * 100 + v) as f32);
        let p = pool(&x, 1).unwrap();
        assert_eq!(p.order(), 0);
        assert_eq!(p.channel(1), &x.channel(1)[..12]);
        let ones = FeatureMap::filled(0, 1, 1.0);
        let u = unpool(&ones, 1).unwrap();
        assert_eq!(&u.data()[..12], &[1.0; 12]);
        assert!(u.data()[12..].iter().all(|&v| v == 0.0));
        assert_eq!(u.data().iter().sum::<f32>(), 12.0);
        assert_eq!(pool(&u, 1).unwrap(), ones);
        assert!(pool(&ones, 0).is_err());
        assert!(unpool(&ones, 2).is_err());
    }

    #[test]
    fn unpool_then_conv_new_vertices_zero_only_without_bias() {
        let mesh = build_icosphere(1).unwrap();
        let x = FeatureMap::filled(0, 1, 2.0);
        let u = unpool(&x, 1).unwrap();
        let mut w = vec![0.0; 7];
        w[0] = 1.0;
        let y0 = ring_conv(&u, &w, &[0.0], &mesh).unwrap();
        assert!(y0.data()[12..].iter().all(|&v| v == 0.0));
        let y1 = ring_conv(&u, &w, &[0.5], &mesh).unwrap();
        assert!(y1.data()[12..].iter().all(|&v| v == 0.5));
    }

    #[test]
    fn time_embedding_basics() {
        let e0 = time_embedding(0, 64).unwrap();
        assert!(e0[..32].iter().all(|&v| v == 0.0));
        assert!(e0[32..].iter().all(|&v| v == 1.0));
        assert!(time_embedding(3, 7).is_err());
        let all: Vec<Vec<f64>> = (0..=1000).map(|t| time_embedding(t, 64).unwrap()).collect();
        for e in &all {
            assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                let d = all[i]
                    .iter()
                    .zip(&all[j])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(d > 1e-6, "t={i} vs t={j}");
            }
        }
    }
}
