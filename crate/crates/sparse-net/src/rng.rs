//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by a
//! user seed plus a stream id, so independent purposes (parameter init,
//! inputs, noise, splits) never share a sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_TRUE_PARAMS: u64 = 2;
pub(crate) const STREAM_INPUTS: u64 = 3;
pub(crate) const STREAM_NOISE: u64 = 4;
pub(crate) const STREAM_SPLIT: u64 = 5;
pub(crate) const STREAM_AUGMENT: u64 = 6;

pub(crate) fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer; used to derive child seeds from a parent seed.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
