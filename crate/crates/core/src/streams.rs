//! Reproducible per-task random streams.
//!
//! Every tour or independent draw `i` gets its own ChaCha8 stream derived
//! from the master seed, so results do not depend on how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream `index` of the generator family keyed by `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A sub-family of streams, e.g. one per experiment phase, keyed by `(seed, tag)`.
pub fn substream_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finaliser; distinct tags give unrelated seeds
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
