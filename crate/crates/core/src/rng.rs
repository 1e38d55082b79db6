//! Deterministic seed derivation.
//!
//! Every randomized stage of the pipeline draws from a [`ChaCha20Rng`] whose
//! seed is derived from the master seed plus a purpose tag and counters. The
//! derivation uses FNV-1a (stable across platforms and releases, unlike
//! `DefaultHasher`), so identical seeds reproduce identical runs byte for
//! byte.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over a byte slice. Stable, fast, good enough for seed mixing.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derives a child seed from `(master, tag, counters)`.
pub fn derive_seed(master: u64, tag: &str, counters: &[u64]) -> u64 {
    let mut h = FNV_OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    eat(&master.to_le_bytes());
    eat(tag.as_bytes());
    for &c in counters {
        eat(&c.to_le_bytes());
    }
    h
}

/// A seeded RNG for one purpose, e.g. `rng_for(seed, "negatives", &[step, anchor])`.
pub fn rng_for(master: u64, tag: &str, counters: &[u64]) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(derive_seed(master, tag, counters))
}

/// Derives a per-record seed from a master seed and a record id.
pub fn seed_for_id(master: u64, tag: &str, id: &str) -> u64 {
    derive_seed(master, tag, &[fnv1a(id.as_bytes())])
}
