//! Seeded, platform-independent random streams (xoshiro256++).

use rand_core::{Rng as _, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: Xoshiro256PlusPlus,
    spare_gaussian: Option<f64>,
}

impl Rng {
    /// The 256-bit state is expanded from `seed` with splitmix64.
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare_gaussian: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for worker or stream `index`, derived from this
    /// generator's seed (not its current position).
    pub fn split(&self, index: u64) -> Rng {
        Rng::new(split_seed(self.seed, index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    /// Uniform in the open interval `(0, 1)`.
    pub fn next_open_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * TWO_POW_NEG_53
    }

    /// Standard normal via Box–Muller; each pair of outputs consumes two uniforms.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare_gaussian.take() {
            return z;
        }
        let u1 = 1.0 - self.next_uniform();
        let u2 = self.next_uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare_gaussian = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Uniform integer in `0..n` (`n > 0`), by rejection so every value is equally likely.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_uniform() < p
    }
}

/// `index`-th splitmix64 output of the stream seeded by `root`.
pub fn split_seed(root: u64, index: u64) -> u64 {
    let mut sm = SplitMix64::seed_from_u64(root);
    let mut out = sm.next_u64();
    for _ in 0..index {
        out = sm.next_u64();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_uniform().to_bits(), b.next_uniform().to_bits());
        }
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_gaussian().to_bits(), b.next_gaussian().to_bits());
        }
    }

    #[test]
    fn uniform_mean() {
        let mut r = Rng::new(1);
        let n = 100_000;
        let mean = (0..n).map(|_| r.next_uniform()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn gaussian_variance() {
        let mut r = Rng::new(2);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| r.next_gaussian()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() < 0.05, "{var}");
        assert!(mean.abs() < 0.02);
    }

    #[test]
    fn gaussians_come_in_pairs_of_uniforms() {
        let mut g = Rng::new(9);
        let mut u = Rng::new(9);
        g.next_gaussian();
        g.next_gaussian();
        u.next_uniform();
        u.next_uniform();
        assert_eq!(g.next_u64(), u.next_u64());
    }

    #[test]
    fn open_uniform_never_hits_endpoints() {
        let mut r = Rng::new(3);
        for _ in 0..10_000 {
            let v = r.next_open_uniform();
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn split_streams_differ_and_are_stable() {
        let root = Rng::new(7);
        let a = root.split(0).next_u64();
        let b = root.split(1).next_u64();
        assert_ne!(a, b);
        assert_eq!(root.split(1).seed(), split_seed(7, 1));
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = Rng::new(5);
        let mut seen = [0usize; 8];
        for _ in 0..8000 {
            seen[r.below(8)] += 1;
        }
        assert!(seen.iter().all(|&c| c > 800));
    }
}
