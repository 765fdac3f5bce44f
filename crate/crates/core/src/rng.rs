//! Reproducible random streams.
//!
//! Every chain draws from its own ChaCha8 stream selected by
//! `(seed, stream index)`; derived seeds come from SplitMix64 so that nested
//! loops (epochs, datapoints, replicates) never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The stream `index` of generator `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// SplitMix64 finalizer.
pub fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// A child seed for the labelled sub-task `(a, b)` of `seed`.
pub fn derive(seed: u64, a: u64, b: u64) -> u64 {
    mix(mix(seed ^ mix(a)) ^ mix(b.wrapping_add(0x5851_F42D_4C95_7F2D)))
}
