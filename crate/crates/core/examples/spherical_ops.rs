//! The network's building blocks on plain feature maps: 1-ring convolution,
//! prefix pooling, zero-extension unpooling and the sinusoidal step
//! embedding.

use icodiff::mesh::RING_LEN;
use icodiff::nn::{pool, ring_conv, time_embedding, unpool};
use icodiff::{build_icosphere, FeatureMap};

fn main() -> icodiff::Result<()> {
    let mesh = build_icosphere(3)?;

    // Two input channels: height (z) and a longitude wave.
    let x = FeatureMap::from_fn(3, 2, |c, v| {
        let [px, py, pz] = mesh.vertices()[v];
        if c == 0 {
            pz as f32
        } else {
            (3.0 * py.atan2(px)).sin() as f32
        }
    });

    // A Laplacian-like filter on channel 0: 6·center minus the six ring
    // taps. Pentagons repeat one neighbor, so their response is skewed.
    let mut w = vec![0.0f32; 2 * RING_LEN];
    w[0] = 6.0;
    for tap in w.iter_mut().take(RING_LEN).skip(1) {
        *tap = -1.0;
    }
    let y = ring_conv(&x, &w, &[0.0], &mesh)?;
    let peak = y.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    println!("laplacian of z on order 3: max |response| {peak:.4}");

    let down = pool(&x, 3)?;
    let up = unpool(&down, 3)?;
    println!(
        "pool: {} -> {} vertices; unpool back to {} (new vertices are zero: {})",
        x.vertex_count(),
        down.vertex_count(),
        up.vertex_count(),
        up.channel(0)[down.vertex_count()..].iter().all(|&v| v == 0.0)
    );
    assert_eq!(pool(&up, 3)?, down);

    for t in [1, 250, 500, 1000] {
        let e = time_embedding(t, 8)?;
        let shown: Vec<String> = e.iter().map(|v| format!("{v:+.3}")).collect();
        println!("t={t:>4}: [{}]", shown.join(" "));
    }
    Ok(())
}
