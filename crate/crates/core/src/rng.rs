//! Seeded, counter-based random source with named substreams.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Deterministic random stream.
///
/// Substreams share the seed but use a different ChaCha stream id, so
/// consuming one substream never shifts the values seen by another.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng {
            seed,
            stream,
            inner,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream identified by a tag and an index (e.g. an epoch).
    pub fn substream(&self, tag: &str, index: u64) -> SeededRng {
        let id = splitmix64(self.stream ^ fnv1a(tag) ^ splitmix64(index));
        Self::with_stream(self.seed, id)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw via the Box–Muller transform.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u lies in (0, 1], keeping ln finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn standard_normal(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_draw() {
        assert!(SeededRng::new(3).standard_normal(0).is_empty());
    }

    #[test]
    fn same_seed_same_stream() {
        let a = SeededRng::new(11).standard_normal(5);
        let b = SeededRng::new(11).standard_normal(5);
        assert_eq!(a, b);
        assert_ne!(a, SeededRng::new(12).standard_normal(5));
    }

    #[test]
    fn normal_moments() {
        let xs = SeededRng::new(7).standard_normal(100_000);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn substreams_are_independent_of_parent_consumption() {
        let root = SeededRng::new(5);
        let a = root.substream("candidates", 3).standard_normal(4);
        let mut consumed = root.clone();
        consumed.standard_normal(100);
        let b = consumed.substream("candidates", 3).standard_normal(4);
        assert_eq!(a, b);
        let c = root.substream("candidates", 4).standard_normal(4);
        assert_ne!(a, c);
        let d = root.substream("noise", 3).standard_normal(4);
        assert_ne!(a, d);
    }

    #[test]
    fn uniform_range_bounds() {
        let mut r = SeededRng::new(1);
        for _ in 0..10_000 {
            let u = r.uniform_range(-2.0, 3.0);
            assert!((-2.0..3.0).contains(&u));
        }
    }
}
