//! Deterministic 64-bit generator used wherever output must be reproducible
//! across runs and implementations (prompt rendering, batch sampling, mock
//! embeddings).
//!
//! The generator is SplitMix64. Derived draws are fixed as follows so that
//! other implementations can reproduce them bit for bit:
//!
//! * `next_f64`: top 53 bits of the next output, scaled by 2^-53.
//! * `below(n)`: high 64 bits of the 128-bit product `next_u64() * n`.

use sha2::{Digest, Sha256};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..n`. Returns 0 when `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Fisher-Yates over the first `take` positions: afterwards
    /// `items[..take]` is a uniform sample without replacement.
    pub fn partial_shuffle<T>(&mut self, items: &mut [T], take: usize) {
        let len = items.len();
        for i in 0..take.min(len) {
            let j = i + self.below((len - i) as u64) as usize;
            items.swap(i, j);
        }
    }
}

/// Stable 64-bit key derived from a sequence of string parts. Parts are
/// length-prefixed so `("ab", "c")` and `("a", "bc")` differ.
pub fn derive_seed(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
}
