//! Deterministic random streams for sampling.
//!
//! Every sampler uses ChaCha8 seeded through `SeedableRng::seed_from_u64`.
//! Trajectory `k` of a batch runs on stream `k` of the same key, so batches
//! can be split across workers without changing any draw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn trajectory(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Inverse-CDF draw over `(outcome, probability)` pairs in the given order.
///
/// Falls back to the last positive-probability outcome when rounding leaves
/// the uniform draw past the accumulated total.
pub fn draw<K: Copy>(rng: &mut impl Rng, weights: impl IntoIterator<Item = (K, f64)>) -> Option<K> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (k, p) in weights {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(k);
        if u < acc {
            return Some(k);
        }
    }
    last
}
