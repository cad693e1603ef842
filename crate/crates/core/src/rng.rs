//! Seeded random streams.
//!
//! Every stochastic component derives its own xoshiro256++ stream from the
//! experiment seed and a fixed stage tag. The derivation is the SplitMix64
//! finalizer applied to `seed + tag · 0x9E3779B97F4A7C15`; the resulting word
//! seeds xoshiro256++ through its own SplitMix64 state expansion
//! (`SeedableRng::seed_from_u64`). Stages therefore never share state and can
//! be regenerated independently of one another.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stage tags, in the order the federation generator consumes them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stage {
    ClassMeans = 1,
    ClientClasses = 2,
    ClientSizes = 3,
    Samples = 4,
    Splits = 5,
    Selection = 6,
    ServerPool = 7,
    ModelInit = 8,
    Pretrain = 9,
    Regularizer = 10,
    Diagnostics = 11,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed.wrapping_add(tag.wrapping_mul(GOLDEN_GAMMA)))
}

pub fn stream(seed: u64, stage: Stage) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stage as u64))
}

/// Stream for a stage further keyed by an index (round, client, ...).
pub fn substream(seed: u64, stage: Stage, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(derive_seed(seed, stage as u64), index.wrapping_add(1)))
}

pub fn gaussian_vec(rng: &mut Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}
