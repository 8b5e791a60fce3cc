//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, stream, step, domain)`: a fresh
//! ChaCha8 generator is keyed by the seed, step index and domain tag, and
//! the realization id selects the ChaCha stream. Realizations can therefore
//! be advanced in any order, on any thread, with identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which consumer a generator feeds; keeps SPDE and particle draws disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Noise = 1,
    Particles = 2,
    Synthetic = 3,
}

/// Global seed plus realization id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub stream: u64,
}

impl StreamKey {
    pub fn new(seed: u64, stream: u64) -> Self {
        StreamKey { seed, stream }
    }

    /// Generator for one step of one consumer.
    pub fn rng(&self, step: u64, domain: Domain) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&step.to_le_bytes());
        key[16..24].copy_from_slice(&(domain as u64).to_le_bytes());
        key[24..32].copy_from_slice(b"dklab\0\0\x01");
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream);
        rng
    }
}
