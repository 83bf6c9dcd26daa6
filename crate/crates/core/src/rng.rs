//! Seeded, splittable sample streams.
//!
//! Every Monte Carlo loop in the crate draws its randomness from a
//! [`ChaCha8Rng`] keyed by the run seed. Sample indices are grouped into fixed
//! batches of [`BATCH_SIZE`]; batch `b` reads ChaCha stream `b`. The values a
//! given sample index sees therefore depend only on `(seed, index)`, never on
//! how batches are scheduled across threads.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Samples per ChaCha stream.
pub const BATCH_SIZE: u64 = 4096;

/// Streams at or above this offset are reserved for per-orbit randomness so
/// they never alias the sampling batches.
pub const AUXILIARY_STREAM_BASE: u64 = 1 << 62;

/// Generator for batch `stream` of the run keyed by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator dedicated to item `index` (start point, orbit, ...).
pub fn auxiliary_rng(seed: u64, index: u64) -> ChaCha8Rng {
    stream_rng(seed, AUXILIARY_STREAM_BASE + index)
}

/// Half-open index ranges `[start, end)` covering `0..n` in batch order.
pub fn batches(n: u64) -> impl IndexedParallelIterator<Item = (u64, u64, u64)> {
    let count = n.div_ceil(BATCH_SIZE) as usize;
    (0..count).into_par_iter().map(move |b| {
        let b = b as u64;
        let start = b * BATCH_SIZE;
        (b, start, (start + BATCH_SIZE).min(n))
    })
}

/// Fills `out` with a point drawn uniformly from the box with the given
/// per-axis bounds. Consumes exactly `lo.len()` 64-bit words.
pub fn fill_uniform<R: Rng>(rng: &mut R, lo: &[f64], hi: &[f64], out: &mut [f64]) {
    for ((x, &a), &b) in out.iter_mut().zip(lo).zip(hi) {
        let u: f64 = rng.random();
        *x = a + (b - a) * u;
    }
}
