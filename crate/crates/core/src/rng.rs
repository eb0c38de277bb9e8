//! Counter-based SplitMix64 generator.
//!
//! Sample `k` (zero based) of a stream seeded with `s` is `mix(s + (k + 1) * GAMMA)`,
//! where `mix` is the SplitMix64 finalizer:
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xBF58_476D_1CE4_E5B9
//! z = (z ^ (z >> 27)) * 0x94D0_49BB_1331_11EB
//! z =  z ^ (z >> 31)
//! ```
//!
//! All arithmetic wraps modulo 2^64, so the stream is identical on every
//! platform. Uniform reals take the top 53 bits: `u = (x >> 11) * 2^-53`.

/// Weyl increment (golden ratio scaled to 64 bits).
pub const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_2: u64 = 0x94D0_49BB_1331_11EB;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX_1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_2);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of samples drawn so far.
    pub fn position(&self) -> u64 {
        self.counter
    }

    /// Random access into the stream without advancing it.
    pub fn at(&self, index: u64) -> u64 {
        mix64(self.seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GAMMA)))
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = self.at(self.counter);
        self.counter += 1;
        v
    }

    /// Uniform on `[0, 1)`.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[-1, 1)`.
    pub fn next_symmetric(&mut self) -> f64 {
        2.0 * self.next_unit() - 1.0
    }

    /// Independent child stream keyed by `tag`. Does not advance `self`.
    pub fn split(&self, tag: u64) -> Rng {
        Rng::new(mix64(self.seed ^ mix64(tag.wrapping_add(GAMMA))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // Reference stream for seed 0 (Vigna's splitmix64.c).
        let mut rng = Rng::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(rng.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn random_access_matches_sequential() {
        let mut rng = Rng::new(99);
        let direct: Vec<u64> = (0..10).map(|k| rng.at(k)).collect();
        let seq: Vec<u64> = (0..10).map(|_| rng.next_u64()).collect();
        assert_eq!(direct, seq);
        assert_eq!(rng.position(), 10);
    }

    #[test]
    fn symmetric_range() {
        let mut rng = Rng::new(5);
        for _ in 0..10_000 {
            let v = rng.next_symmetric();
            assert!((-1.0..1.0).contains(&v));
        }
    }

    #[test]
    fn split_streams_differ() {
        let base = Rng::new(1);
        let mut a = base.split(0);
        let mut b = base.split(1);
        assert_ne!(a.next_u64(), b.next_u64());
        assert_eq!(base.split(7), base.split(7));
    }
}
