//! Dense matrices, SVD, seeded randomness and compensated summation.

mod matrix;
mod rng;
mod svd;

pub use matrix::{gemm, Matrix};
pub use rng::Rng;
pub use svd::{svd, svd_with, Svd, SvdOptions};

use crate::error::Result;

/// Matrix of i.i.d. normal draws; see [`Rng::gauss_matrix`].
pub fn gauss(rng: &mut Rng, mean: f64, std: f64, rows: usize, cols: usize) -> Result<Matrix> {
    rng.gauss_matrix(mean, std, rows, cols)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &KahanSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = KahanSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}
