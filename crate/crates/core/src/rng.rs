//! Seeded random streams.
//!
//! All sampling in the crate draws from ChaCha8, a counter-based stream
//! cipher generator. A `(seed, stream)` pair fully determines the output, so
//! independent chains and trials get distinct stream ids from one seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type KmcRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> KmcRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for sub-stream `stream` of `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> KmcRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed; used where an API wants a plain `u64` seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined input
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
