//! Seeded random streams.
//!
//! Every stochastic component draws from a ChaCha stream keyed by a base seed
//! plus a short tag path, so independent consumers never share state and a
//! run can be resumed mid-way from `(seed, epoch, ...)` alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Tags separating the purposes a stream may serve.
pub mod tag {
    pub const DATA: u64 = 0x6461_7461;
    pub const INIT: u64 = 0x696e_6974;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const REGION: u64 = 0x7265_6769;
    pub const PAIR: u64 = 0x7061_6972;
    pub const MIX: u64 = 0x6d69_7870;
    pub const OUTLIER: u64 = 0x6f75_746c;
    pub const BANK: u64 = 0x6261_6e6b;
    pub const VARIANT: u64 = 0x7661_7269;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a seed and tag path into a single 64-bit key.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn derive_rng(seed: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, path))
}
