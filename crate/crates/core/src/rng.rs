//! Small sampling helpers over a seeded ChaCha stream.
//!
//! Every random draw in the project goes through [`stream`], so one `u64`
//! seed plus a stream id fully determines a run.

use rand_chacha::ChaCha8Rng;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

pub use rand_chacha::ChaCha8Rng as Rng;

/// Stream ids, so that each consumer of a seed draws independent numbers.
pub const STREAM_INIT: u64 = 0;
pub const STREAM_SPLIT: u64 = 1;
pub const STREAM_SYNTH: u64 = 2;
/// Epoch `e` of training uses `STREAM_EPOCH + e`.
pub const STREAM_EPOCH: u64 = 1 << 32;

/// Independent generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform in `[0, 1)`.
pub fn unit(rng: &mut impl RngCore) -> f64 {
    rng.random()
}

pub fn uniform(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(rng)
}

/// Uniform integer in `[0, n)`.
pub fn below(rng: &mut impl RngCore, n: u64) -> u64 {
    rng.random_range(0..n)
}

pub fn normal(rng: &mut impl RngCore) -> f64 {
    StandardNormal.sample(rng)
}

pub fn shuffle<T>(rng: &mut impl RngCore, items: &mut [T]) {
    items.shuffle(rng);
}
