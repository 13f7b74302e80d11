//! Deterministic seed derivation.
//!
//! Sub-seeds are derived as `splitmix64(seed ^ splitmix64(fnv1a(part)))`
//! folded over the parts, so a per-pair or per-stage stream depends only on
//! its names and never on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn mix(seed: u64, value: u64) -> u64 {
    splitmix64(seed ^ splitmix64(value))
}

pub fn mix_str(seed: u64, part: &str) -> u64 {
    mix(seed, fnv1a(part.as_bytes()))
}

/// Named stream derived from a base seed, e.g. `derive(seed, &["ransac", a, b])`.
pub fn derive(seed: u64, parts: &[&str]) -> u64 {
    parts.iter().fold(seed, |s, p| mix_str(s, p))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
