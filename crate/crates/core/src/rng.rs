//! Seed derivation so every stochastic component gets its own stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type UqRng = ChaCha8Rng;

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for `(base, stream, index)`.
pub fn derive_seed(base: u64, stream: &str, index: u64) -> u64 {
    let tag = stream
        .bytes()
        .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01B3));
    mix(mix(base ^ tag).wrapping_add(index))
}

pub fn rng_from(seed: u64) -> UqRng {
    UqRng::seed_from_u64(seed)
}

pub fn derived_rng(base: u64, stream: &str, index: u64) -> UqRng {
    rng_from(derive_seed(base, stream, index))
}
