//! Seed derivation for reproducible streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by a
//! seed mixed with a fixed tuple of counters, so a given
//! `(seed, task, variation)` always yields the same values regardless of how
//! many other streams were consumed before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold a list of counters into a single 64-bit key.
pub fn mix(seed: u64, counters: &[u64]) -> u64 {
    counters
        .iter()
        .fold(splitmix64(seed), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

/// Deterministic generator for the stream identified by `(seed, counters)`.
pub fn stream(seed: u64, counters: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, counters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = stream(42, &[1, 2]).random_iter().take(4).collect();
        let b: Vec<u64> = stream(42, &[1, 2]).random_iter().take(4).collect();
        let c: Vec<u64> = stream(42, &[2, 1]).random_iter().take(4).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
