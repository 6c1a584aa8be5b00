//! Splittable seeding: every replication gets its own generator derived from
//! `(master_seed, index)`, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `index` under `master`. Stable across versions.
pub fn replication_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn replication_rng(master: u64, index: u64) -> SimRng {
    SimRng::seed_from_u64(replication_seed(master, index))
}

/// Derives an independent master seed for a named stream (e.g. the Λ estimate).
pub fn stream_seed(master: u64, stream: &str) -> u64 {
    stream
        .bytes()
        .fold(splitmix64(master), |acc, b| splitmix64(acc ^ u64::from(b)))
}
