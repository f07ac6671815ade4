//! Purpose-scoped deterministic random streams.
//!
//! Every random decision in a run draws from a stream identified by the
//! master seed and a stream id. The id packs a purpose tag with a user index,
//! so a user's draws never depend on how many other users exist.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Combined with a user index to form a stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Purpose {
    RewardMatrix = 1,
    Reward = 2,
    Flag = 3,
    Cfl = 4,
    Newbie = 5,
    Test = 0xffff,
}

impl Purpose {
    pub fn stream_id(self, user: usize) -> u64 {
        ((self as u64) << 32) | (user as u64 & 0xffff_ffff)
    }
}

/// A single-owner random stream keyed by `(seed, stream_id)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn for_user(seed: u64, purpose: Purpose, user: usize) -> Self {
        Self::new(seed, purpose.stream_id(user))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// `true` with probability `p` (clamped to `[0, 1]`).
    pub fn bernoulli(&mut self, p: f64) -> bool {
        if p >= 1.0 {
            return true;
        }
        if p <= 0.0 {
            return false;
        }
        self.uniform() < p
    }

    /// Uniform index in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}
