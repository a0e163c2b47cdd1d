use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Seeded xoshiro256++ stream with Box–Muller Gaussian draws.
///
/// Not `Sync`-shared: give each task its own stream via [`Rng::child`].
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: Xoshiro256PlusPlus,
    spare: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this stream's seed and a tag. Does not
    /// consume draws from `self`.
    pub fn child(&self, tag: u64) -> Rng {
        Rng::new(splitmix64(
            self.seed ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d)),
        ))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`, without modulo bias.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - U keeps the log argument in (0, 1].
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    /// Matrix of i.i.d. `N(mean, std²)` draws, filled in row-major order.
    pub fn gauss_matrix(&mut self, mean: f64, std: f64, rows: usize, cols: usize) -> Result<Matrix> {
        if !(std >= 0.0) {
            return Err(Error::Argument(format!("standard deviation {std} is negative")));
        }
        let data = (0..rows * cols).map(|_| self.normal(mean, std)).collect();
        Matrix::new(rows, cols, data)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_std_gives_constant() {
        let mut rng = Rng::new(3);
        let m = rng.gauss_matrix(2.5, 0.0, 4, 5).unwrap();
        assert!(m.data().iter().all(|v| *v == 2.5));
    }

    #[test]
    fn negative_std_is_argument_error() {
        let mut rng = Rng::new(3);
        assert!(matches!(rng.gauss_matrix(0.0, -1.0, 1, 1), Err(Error::Argument(_))));
        assert!(rng.gauss_matrix(0.0, f64::NAN, 1, 1).is_err());
    }

    #[test]
    fn same_seed_same_matrix() {
        let a = Rng::new(42).gauss_matrix(0.0, 1.0, 10, 10).unwrap();
        let b = Rng::new(42).gauss_matrix(0.0, 1.0, 10, 10).unwrap();
        assert_eq!(a, b);
        let c = Rng::new(43).gauss_matrix(0.0, 1.0, 10, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn million_draws_moments() {
        let mut rng = Rng::new(2024);
        let m = rng.gauss_matrix(0.0, 5.0, 1000, 1000).unwrap();
        let n = m.len() as f64;
        let mean = m.data().iter().sum::<f64>() / n;
        let var = m.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var.sqrt() - 5.0).abs() < 0.05, "std {}", var.sqrt());
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = Rng::new(9);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn children_are_distinct_and_stable() {
        let root = Rng::new(1);
        let mut a = root.child(0);
        let mut b = root.child(1);
        assert_ne!(a.next_u64(), b.next_u64());
        assert_eq!(root.child(7).next_u64(), Rng::new(1).child(7).next_u64());
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = Rng::new(5);
        let mut p = rng.permutation(100);
        p.sort_unstable();
        assert_eq!(p, (0..100).collect::<Vec<_>>());
    }
}
