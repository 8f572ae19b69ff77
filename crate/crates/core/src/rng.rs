//! Deterministic random streams. Every consumer derives its generator from
//! the run seed and a path of indices, so replicate `r` of task `t` draws the
//! same numbers regardless of what else ran before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for `seed` on the stream named by `path`.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    let id = path.iter().fold(splitmix(0x5EED), |h, &p| splitmix(h ^ splitmix(p)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Stream tags, so that distinct consumers never collide.
pub mod tag {
    pub const SAMPLE: u64 = 1;
    pub const SEEDS: u64 = 2;
    pub const FOLDS: u64 = 3;
    pub const REPLICATE: u64 = 4;
    pub const CENSOR: u64 = 5;
    pub const TREES: u64 = 6;
    pub const BOOTSTRAP: u64 = 7;
}
