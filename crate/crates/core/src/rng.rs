//! Deterministic random number stream.
//!
//! Every stochastic operation in this crate draws from an [`RngState`], a
//! seedable ChaCha stream: identical seed, identical sample sequence, on any
//! platform. Pipelines derive one stream per stage from a single master seed
//! so that whole runs replay bit-exactly.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Seedable deterministic pseudo-random stream.
#[derive(Debug, Clone)]
pub struct RngState {
    rng: ChaCha12Rng,
}

impl RngState {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    /// Stream for a named pipeline stage, derived from the master seed.
    ///
    /// Different stage names yield statistically independent streams; the
    /// derivation is a fixed FNV-1a mix so it never changes between runs.
    pub fn for_stage(master_seed: u64, stage: &str) -> Self {
        Self::from_seed(stage_seed(master_seed, stage))
    }

    /// Split off an independent child stream, advancing this one.
    pub fn split(&mut self) -> Self {
        Self::from_seed(self.rng.next_u64())
    }

    /// Draw a seed for a derived generator, advancing this stream.
    pub fn draw_seed(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}

/// Deterministic per-stage seed derived from one master seed.
pub fn stage_seed(master_seed: u64, stage: &str) -> u64 {
    master_seed ^ fnv1a(stage.as_bytes())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
