//! Seed derivation. Every random decision draws from a ChaCha stream keyed by
//! `(seed, stream)` so independent consumers never share generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for an independent stream under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Packs a tag and up to three indices into one stream id.
pub fn stream_id(tag: u8, a: u64, b: u64, c: u64) -> u64 {
    ((tag as u64) << 56) ^ (a & 0xFFFF) << 40 ^ (b & 0x00FF_FFFF) << 16 ^ (c & 0xFFFF)
}

pub mod tags {
    pub const DATA_CENTERS: u8 = 1;
    pub const DATA_TRANSFORM: u8 = 2;
    pub const DATA_TRAIN: u8 = 3;
    pub const DATA_TEST: u8 = 4;
    pub const PARTITION: u8 = 5;
    pub const MODEL_INIT: u8 = 6;
    pub const CLIENT_BATCHES: u8 = 7;
    pub const BANK_SAMPLE: u8 = 8;
    pub const DECODER: u8 = 9;
    pub const ATTACK_SPLIT: u8 = 10;
    pub const PROXIMITY: u8 = 11;
}
