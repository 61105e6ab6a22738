//! Deterministic seed derivation.
//!
//! Every random decision in the crate (dataset geometry, weight init,
//! batch sampling) draws from a ChaCha stream seeded through this module,
//! so a run is a pure function of its top-level seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Mix a base seed with a role tag and two indices into a fresh seed.
pub fn derive_seed(base: u64, tag: &str, a: u64, b: u64) -> u64 {
    let mut s = splitmix64(base ^ fnv1a(tag.as_bytes()));
    s = splitmix64(s ^ a.wrapping_mul(0xd1342543de82ef95));
    splitmix64(s ^ b.wrapping_mul(0xaf251af3b0f025b5))
}

/// ChaCha RNG for a derived seed. ChaCha output is identical across
/// platforms, which keeps generated datasets and inits reproducible.
pub fn rng(base: u64, tag: &str, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag, a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_deterministic() {
        assert_eq!(derive_seed(7, "batch", 1, 2), derive_seed(7, "batch", 1, 2));
    }

    #[test]
    fn derive_separates_tags_and_indices() {
        let s = derive_seed(7, "batch", 1, 2);
        assert_ne!(s, derive_seed(7, "geom", 1, 2));
        assert_ne!(s, derive_seed(7, "batch", 2, 2));
        assert_ne!(s, derive_seed(7, "batch", 1, 3));
        assert_ne!(s, derive_seed(8, "batch", 1, 2));
    }
}
