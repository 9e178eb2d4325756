//! Seeded random streams.
//!
//! Every random decision in the library is drawn from a ChaCha8 generator
//! keyed by the master seed. Independent consumers use distinct ChaCha
//! stream ids, so adding draws to one consumer never shifts another.
//!
//! | stream            | consumer                                  |
//! |-------------------|-------------------------------------------|
//! | `DSBM_EDGES`      | DSBM edge + orientation draws             |
//! | `DSBM_FEATURES`   | standard-normal node features             |
//! | `NODE_SPLIT`      | node train/val/test splits                |
//! | `LINK_SPLIT`      | link edge sampling and label orientation  |
//! | `NEGATIVES`       | negative pair rejection sampling          |
//! | `INIT`            | parameter initialization                  |
//! | `DROPOUT`         | dropout masks during training             |
//!
//! DSBM edge draws consume exactly two `u64` words per unordered pair in
//! lexicographic `(i < j)` order, so pair `p` always reads words
//! `4p..4p+4` of its stream whatever the parameters are.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A named sub-stream of a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Stream(pub u64);

impl Stream {
    pub const DSBM_EDGES: Stream = Stream(1);
    pub const DSBM_FEATURES: Stream = Stream(2);
    pub const NODE_SPLIT: Stream = Stream(3);
    pub const LINK_SPLIT: Stream = Stream(4);
    pub const NEGATIVES: Stream = Stream(5);
    pub const INIT: Stream = Stream(6);
    pub const DROPOUT: Stream = Stream(7);
}

/// Generator for `stream` under master `seed`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.0);
    rng
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
#[inline]
pub fn unit_f64(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
