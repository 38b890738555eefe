//! Seed derivation.
//!
//! Every stochastic step draws from a ChaCha stream keyed by
//! `(seed, epoch, worker)`, so a run is reproducible and a one-worker
//! parameter-server round consumes exactly the stream a single-machine epoch
//! would.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for one epoch of one worker.
pub fn for_epoch(seed: u64, epoch: u64, worker: u64) -> Rng {
    let key = splitmix(splitmix(splitmix(seed) ^ epoch) ^ worker.wrapping_add(0x5151));
    ChaCha8Rng::seed_from_u64(key)
}

/// Generator for a named auxiliary purpose (splits, probes, partitions).
pub fn for_purpose(seed: u64, purpose: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(purpose)))
}

pub mod purpose {
    pub const INIT: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const PROBE: u64 = 4;
    pub const GENERATE: u64 = 5;
}
