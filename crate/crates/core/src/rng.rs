//! Seeded random streams.
//!
//! Every generator in the crate is a ChaCha8 stream keyed by a 64-bit seed
//! (expanded with `SeedableRng::seed_from_u64`) plus a stream id. Distinct
//! consumers use distinct stream ids, so adding draws to one consumer never
//! shifts another. ChaCha8 output is specified bit-for-bit, which keeps batch
//! orders and initialisations reproducible across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids of the crate's random consumers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Shuffle = 1,
    Init = 2,
    MotionNoise = 3,
    Texture = 4,
    Test = 5,
}

pub fn stream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Derives a child seed, for example one per test sequence.
pub fn split_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
