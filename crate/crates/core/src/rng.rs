//! Deterministic random streams with cheap substream derivation.
//!
//! Substream seeds are derived by folding a packed tuple of integers through
//! splitmix64, so `(master, cell, trial)` always maps to the same stream no
//! matter how trials are scheduled across threads.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// One step of the splitmix64 generator.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a packed tuple `(master, parts...)` into a substream seed.
pub fn hash64(master: u64, parts: &[u64]) -> u64 {
    let mut state = master;
    let mut out = splitmix64(&mut state);
    for &p in parts {
        state ^= p;
        out = splitmix64(&mut state);
    }
    out
}

/// A seeded random stream. Thin wrapper over ChaCha8 so every sampler in the
/// crate shares one deterministic source.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn seed(seed: u64) -> Self {
        RngStream {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Stream for the substream id `hash64(master, parts)`.
    pub fn substream(master: u64, parts: &[u64]) -> Self {
        RngStream::seed(hash64(master, parts))
    }

    /// Draw a fresh master seed for a family of substreams.
    pub fn fork_seed(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        debug_assert!((0.0..=1.0).contains(&p));
        self.inner.random::<f64>() < p
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}
