//! Deterministic random streams.
//!
//! Every stream is a ChaCha8 generator keyed by `mix(seed, lane)` and
//! positioned on the ChaCha stream id `step`. The sample index (or subject)
//! goes into `lane` and the timestep into `step`, so parallel workers draw
//! the same numbers regardless of scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a lane id.
pub fn mix(seed: u64, lane: u64) -> u64 {
    splitmix64(seed ^ splitmix64(lane.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Generator for `(seed, lane, step)`.
pub fn stream(seed: u64, lane: u64, step: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, lane));
    rng.set_stream(step);
    rng
}

/// Fills a vector with standard normal draws.
pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f32> {
    (0..len)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect()
}
