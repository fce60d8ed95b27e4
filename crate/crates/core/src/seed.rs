//! Deterministic seed derivation. Every random stream in the crate is a
//! named sub-stream of one user seed.

use crate::nn::config::fnv1a;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the named sub-stream of `seed`.
pub fn substream(seed: u64, name: &str) -> u64 {
    mix64(mix64(seed) ^ fnv1a(name.as_bytes()))
}

/// Augmentation seed of one sample; depends only on its identity, never on
/// which worker produces it.
pub fn sample_seed(seed: u64, epoch: u64, index: usize) -> u64 {
    mix64(mix64(mix64(seed) ^ epoch) ^ index as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ() {
        assert_ne!(substream(1, "init"), substream(1, "sampler"));
        assert_ne!(substream(1, "init"), substream(2, "init"));
        assert_ne!(sample_seed(0, 0, 1), sample_seed(0, 1, 0));
        assert_eq!(sample_seed(5, 2, 9), sample_seed(5, 2, 9));
    }
}
