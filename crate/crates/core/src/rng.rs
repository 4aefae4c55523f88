//! Reproducible random streams.
//!
//! Every trajectory gets its own ChaCha8 stream keyed by `(seed, purpose, index)`,
//! so results do not depend on how trajectories are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

/// Purpose tags keep streams of unrelated experiments apart under one seed.
pub mod purpose {
    pub const DIRECT: u64 = 1;
    pub const SPECTRUM: u64 = 2;
    pub const REDUCED: u64 = 3;
    pub const SPHERE: u64 = 4;
    pub const INITIAL: u64 = 5;
    pub const MIXING: u64 = 6;
    pub const CONTROL: u64 = 7;
    pub const SPAN: u64 = 8;
    pub const NOISE: u64 = 9;
    pub const REGULARIZED: u64 = 10;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for trajectory `index` of experiment `purpose` under `seed`.
pub fn stream(seed: u64, purpose: u64, index: u64) -> StreamRng {
    let key = splitmix64(seed ^ splitmix64(purpose));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

#[inline]
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}
