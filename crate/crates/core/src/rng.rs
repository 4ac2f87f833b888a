//! Seeded random streams.
//!
//! All randomness derives from one root seed. Each consumer asks for its own
//! stream by salt so that adding a consumer never shifts another's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod salt {
    pub const SPLIT: u64 = 1;
    pub const DISCRETIZE: u64 = 2;
    pub const DNN_INIT: u64 = 3;
    pub const DNN_SHUFFLE: u64 = 4;
    pub const LR_SHUFFLE: u64 = 5;
    pub const SYNTH: u64 = 6;
}

/// Independent stream for `salt` under `seed`.
pub fn stream(seed: u64, salt: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(salt);
    rng
}
