//! Counter-based seed derivation.
//!
//! Every random stream is keyed by `(seed, index, purpose)` and mixed with
//! SplitMix64 finalizers; the resulting 64-bit key seeds a ChaCha8 stream.
//! Both algorithms are fully specified, so datasets and initializations are
//! reproducible across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn purpose_key(purpose: &str) -> u64 {
    // FNV-1a
    purpose
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

pub fn derive_seed(seed: u64, index: u64, purpose: &str) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ index) ^ purpose_key(purpose))
}

pub fn stream(seed: u64, index: u64, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index, purpose))
}
