//! Counter-based random streams addressed by `(seed base, stream, replica,
//! purpose)`.
//!
//! Every replica draws from its own ChaCha8 stream, so results do not depend
//! on how replicas are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// What a stream is used for; each purpose gets an independent stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Field = 0,
    Edges = 1,
    Interior = 2,
    Aux = 3,
}

/// Address of one replica's randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedPath {
    pub seed_base: u64,
    /// Experiment / parameter-point identifier.
    pub stream: u64,
    pub replica: u64,
}

impl SeedPath {
    pub fn new(seed_base: u64, stream: u64, replica: u64) -> Self {
        SeedPath {
            seed_base,
            stream,
            replica,
        }
    }

    pub fn with_replica(self, replica: u64) -> Self {
        SeedPath { replica, ..self }
    }

    /// Generator for `purpose`.
    pub fn rng(&self, purpose: Purpose) -> ChaCha8Rng {
        self.rng_for(purpose, 0)
    }

    /// Key for [`keyed_uniform`] draws of `purpose`.
    pub fn key(&self, purpose: Purpose) -> u64 {
        use rand::RngCore;
        self.rng(purpose).next_u64()
    }

    /// Generator for `purpose` and an extra sub-stream tag (e.g. an edge).
    pub fn rng_for(&self, purpose: Purpose, sub: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = mix(self.seed_base ^ mix(self.stream ^ mix(sub.wrapping_add(0x51))));
        for chunk in key.chunks_exact_mut(8) {
            state = mix(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream((self.replica << 2) | purpose as u64);
        rng
    }
}

/// Uniform in `[0, 1)` addressed by `(key, counter)`, independent of the
/// order in which counters are queried.
pub fn keyed_uniform(key: u64, counter: u64) -> f64 {
    (mix(key ^ mix(counter)) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit tag for a string label (FNV-1a, then mixed).
pub fn tag(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix(h)
}
