//! Deterministic random streams.
//!
//! Every draw in a run comes from a stream keyed by `(seed, purpose, round,
//! client)`. Streams never share state, so the order in which clients are
//! processed (or whether they are processed in parallel) cannot change any
//! sampled value.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// What a stream is used for. Part of the stream key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    Dataset,
    Split,
    Partition,
    Noise,
    ModelInit,
    WarmupSelect,
    WarmupTrain,
    Select,
    Train,
    /// Free-form purpose for tests and tools.
    Custom(u64),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Dataset => 1,
            Purpose::Split => 2,
            Purpose::Partition => 3,
            Purpose::Noise => 4,
            Purpose::ModelInit => 5,
            Purpose::WarmupSelect => 6,
            Purpose::WarmupTrain => 7,
            Purpose::Select => 8,
            Purpose::Train => 9,
            Purpose::Custom(v) => 0x8000_0000_0000_0000 | v,
        }
    }
}

/// Root of the stream hierarchy for one run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedRoot {
    seed: u64,
}

impl SeedRoot {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fork the child stream for `(purpose, round, client)`.
    pub fn stream(&self, purpose: Purpose, round: u64, client: u64) -> RngStream {
        RngStream::new(self.seed, purpose, round, client)
    }
}

/// A seeded generator owned by exactly one consumer.
#[derive(Clone, Debug)]
pub struct RngStream {
    inner: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, purpose: Purpose, round: u64, client: u64) -> Self {
        let mut state = splitmix64(seed ^ 0x6A09_E667_F3BC_C908);
        let mut key = [0u8; 32];
        let words = [
            purpose.tag(),
            round,
            client,
            0x243F_6A88_85A3_08D3, // spacer so the last key word differs from the coordinates
        ];
        for (chunk, word) in key.chunks_exact_mut(8).zip(words) {
            state = splitmix64(state ^ word);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        Self {
            inner: ChaCha12Rng::from_seed(key),
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
