//! Deterministic seed derivation.
//!
//! Every randomized subsystem takes a named stream derived from one base
//! seed, so independent components never share or shift each other's
//! randomness. The split is an FNV-1a hash of the base seed and a tag,
//! finished with a SplitMix64 mix, and is stable across platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// Derive a child seed from `base` and a textual stream tag.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in base.to_le_bytes() {
        h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
    }
    for b in tag.as_bytes() {
        h = (h ^ *b as u64).wrapping_mul(FNV_PRIME);
    }
    splitmix64(h)
}

/// The RNG used throughout the crate.
pub type Rng = ChaCha8Rng;

/// A named random stream: `rng_for(seed, "init")`, `rng_for(seed, "aug:3")`.
pub fn rng_for(base: u64, tag: &str) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
