//! Counter-based random streams.
//!
//! Every stochastic draw in the simulators is addressed by a tuple of integers
//! (seed, stream, counter) and hashed to a uniform variate. Two samplers that
//! share a seed therefore see the same noise for the same node at the same
//! step, whatever else they did before.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash an ordered list of words into one 64-bit value.
pub fn hash_words(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &w| mix64(acc ^ mix64(w)))
}

/// Uniform variate in [0, 1) with 53 bits of resolution.
pub fn uniform(seed: u64, stream: u64, counter: u64) -> f64 {
    let bits = hash_words(&[seed, stream, counter]) >> 11;
    bits as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A general-purpose generator seeded from a hashed key, for draws that are
/// not tied to a single (node, step) address (layouts, action sequences).
pub fn rng_for(words: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(hash_words(words))
}

/// Position in a per-node noise stream. Sampling consumes the cursor by value
/// and hands back the advanced one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct NoiseCursor {
    pub seed: u64,
    pub step: u64,
}

impl NoiseCursor {
    pub fn new(seed: u64) -> Self {
        NoiseCursor { seed, step: 0 }
    }

    pub fn at(seed: u64, step: u64) -> Self {
        NoiseCursor { seed, step }
    }

    /// Uniform draw for `node` at the current step.
    pub fn draw(&self, node: usize) -> f64 {
        uniform(self.seed, node as u64, self.step)
    }

    pub fn advance(self) -> Self {
        NoiseCursor {
            seed: self.seed,
            step: self.step + 1,
        }
    }
}
