//! Seed plumbing: one root seed, named per-stage streams.
//!
//! Every source of randomness in the pipeline derives from the run's root
//! seed through `stage_seed`, so any stage can be rerun in isolation and
//! reproduce exactly what `run-all` would have done.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derive the seed for a named stream from the root seed.
pub fn stage_seed(root: u64, label: &str) -> u64 {
    splitmix64(root ^ fnv1a(label.as_bytes()))
}

/// Deterministic, platform-independent RNG for the given seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stable 64-bit mix used wherever a value (not a stream) must be hashed,
/// e.g. Weisfeiler-Lehman color vocabularies.
pub fn mix64(z: u64) -> u64 {
    splitmix64(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn stages_differ() {
        let a = stage_seed(7, "train-gnn");
        let b = stage_seed(7, "distill");
        assert_ne!(a, b);
        assert_eq!(a, stage_seed(7, "train-gnn"));
    }

    #[test]
    fn rng_reproducible() {
        let mut r1 = rng_from(42);
        let mut r2 = rng_from(42);
        for _ in 0..16 {
            assert_eq!(r1.random::<u64>(), r2.random::<u64>());
        }
    }
}
