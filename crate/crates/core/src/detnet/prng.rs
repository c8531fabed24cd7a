//! Counter-mode SHA-256 random streams.
//!
//! Draw `k` of stream `(seed, tag)` is the leading 64 bits of
//! `SHA-256(seed || len(tag) || tag || k)`. Streams with different tags are
//! independent, and any draw can be recomputed from its index alone.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::model::Seed;

#[derive(Debug, Clone)]
pub struct PrngStream {
    prefix: Sha256,
    cursor: u64,
}

impl PrngStream {
    pub fn new(seed: &Seed, tag: &str) -> PrngStream {
        let mut prefix = Sha256::new();
        prefix.update(seed.0);
        prefix.update((tag.len() as u32).to_be_bytes());
        prefix.update(tag.as_bytes());
        PrngStream { prefix, cursor: 0 }
    }

    /// Stream positioned at draw `cursor`.
    pub fn at(seed: &Seed, tag: &str, cursor: u64) -> PrngStream {
        let mut s = PrngStream::new(seed, tag);
        s.cursor = cursor;
        s
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    /// The draw at `index`, without moving the cursor.
    pub fn draw_at(&self, index: u64) -> u64 {
        let mut h = self.prefix.clone();
        h.update(index.to_be_bytes());
        let out = h.finalize();
        u64::from_be_bytes(out[..8].try_into().expect("8 bytes"))
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = self.draw_at(self.cursor);
        self.cursor += 1;
        v
    }

    /// Unbiased draw from `[0, bound)` by rejection.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "empty range");
        let limit = u64::MAX - u64::MAX % bound;
        loop {
            let v = self.next_u64();
            if v < limit {
                return v % bound;
            }
        }
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl Iterator for PrngStream {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        Some(self.next_u64())
    }
}

/// First `n` draws of the stream `(seed, domain_tag)`.
pub fn prng_stream(seed: &Seed, domain_tag: &str, n: usize) -> Vec<u64> {
    PrngStream::new(seed, domain_tag).take(n).collect()
}

/// ChaCha generator keyed from the stream, for consumers that need a
/// `rand::Rng` (e.g. normal variates for sensor noise).
pub fn chacha_from(seed: &Seed, domain_tag: &str) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut s = PrngStream::new(seed, domain_tag);
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&s.next_u64().to_be_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_repeatable() {
        let seed = Seed::from_u64(3);
        assert!(prng_stream(&seed, "x", 0).is_empty());
        assert_eq!(prng_stream(&seed, "x", 50), prng_stream(&seed, "x", 50));
        assert_ne!(prng_stream(&seed, "x", 4), prng_stream(&seed, "y", 4));
    }

    #[test]
    fn cursor_addresses_the_same_draws() {
        let seed = Seed::from_u64(9);
        let all = prng_stream(&seed, "t", 10);
        let mut tail = PrngStream::at(&seed, "t", 6);
        assert_eq!(tail.next_u64(), all[6]);
        assert_eq!(tail.cursor(), 7);
    }

    #[test]
    fn chi_square_mod_16() {
        // 15 degrees of freedom; chi2.ppf(0.999, 15) = 37.697.
        let draws = prng_stream(&Seed::from_u64(2024), "chi", 100_000);
        let mut counts = [0u64; 16];
        for d in draws {
            counts[(d % 16) as usize] += 1;
        }
        let expected = 100_000.0 / 16.0;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(stat < 37.697, "chi-square {stat}");
    }

    #[test]
    fn below_stays_in_range() {
        let mut s = PrngStream::new(&Seed::from_u64(1), "b");
        for bound in 1..200u64 {
            assert!(s.below(bound) < bound);
        }
    }
}
