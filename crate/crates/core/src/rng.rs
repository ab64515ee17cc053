//! Seed derivation for reproducible, independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for a named sub-stream.
pub fn derive(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h = mix(seed);
    for b in tag.bytes() {
        h = mix(h ^ b as u64);
    }
    mix(h ^ index)
}

pub fn stream(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag, index))
}
