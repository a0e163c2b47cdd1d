//! Thin singular value decomposition by one-sided (Hestenes) Jacobi rotations.
//!
//! For an `m x n` input with `k = min(m, n)` the result holds `U` (`m x k`),
//! the `k` singular values in nonincreasing order, and `Vᵀ` (`k x n`).
//! Columns of the working copy are rotated pairwise until every pair is
//! orthogonal to within `tol` (relative to the product of their norms), or the
//! sweep cap is reached.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy)]
pub struct SvdOptions {
    /// Maximum number of full sweeps over all column pairs.
    pub max_sweeps: usize,
    /// Relative orthogonality threshold for a column pair.
    pub tol: f64,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 60,
            tol: 1e-15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub vt: Matrix,
}

impl Svd {
    /// `U · diag(S) · Vᵀ`
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for (c, s) in self.s.iter().enumerate() {
                us[(r, c)] *= s;
            }
        }
        us.matmul(&self.vt).expect("svd factors are conformant")
    }
}

pub fn svd(a: &Matrix) -> Result<Svd> {
    svd_with(a, SvdOptions::default())
}

pub fn svd_with(a: &Matrix, opts: SvdOptions) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::Numeric("svd input has non-finite entries".into()));
    }
    if a.rows() >= a.cols() {
        let (u, s, v) = jacobi_tall(a, opts)?;
        Ok(Svd {
            u,
            s,
            vt: v.transpose(),
        })
    } else {
        // A = (Aᵀ)ᵀ = (U' S V'ᵀ)ᵀ = V' S U'ᵀ
        let (u, s, v) = jacobi_tall(&a.transpose(), opts)?;
        Ok(Svd {
            u: v,
            s,
            vt: u.transpose(),
        })
    }
}

/// Returns `(U, S, V)` for `rows >= cols`, all columns already sorted.
fn jacobi_tall(a: &Matrix, opts: SvdOptions) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let m = a.rows();
    let n = a.cols();
    // Column-major working copies make the pair updates contiguous.
    let mut w: Vec<Vec<f64>> = (0..n).map(|c| a.column(c)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|c| (0..n).map(|r| if r == c { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut converged = n < 2;
    for _ in 0..opts.max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = col_products(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= opts.tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut w, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "jacobi svd did not converge within {} sweeps",
            opts.max_sweeps
        )));
    }

    let sigma: Vec<f64> = w.iter().map(|col| norm(col)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));

    let scale = sigma.iter().cloned().fold(0.0, f64::max);
    let negligible = scale * (m.max(n) as f64) * f64::EPSILON;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut s_sorted = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    for &i in &order {
        let s = sigma[i];
        s_sorted.push(s);
        v_cols.push(v[i].clone());
        if s > negligible {
            u_cols.push(w[i].iter().map(|x| x / s).collect());
        } else {
            u_cols.push(Vec::new());
        }
    }
    complete_basis(&mut u_cols, m);

    let u = Matrix::from_fn(m, n, |r, c| u_cols[c][r]);
    let v = Matrix::from_fn(n, n, |r, c| v_cols[c][r]);
    Ok((u, s_sorted, v))
}

fn col_products(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let mut a = 0.0;
    let mut b = 0.0;
    let mut g = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        a += xi * xi;
        b += yi * yi;
        g += xi * yi;
    }
    (a, b, g)
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (xp, xq) in cp.iter_mut().zip(cq.iter_mut()) {
        let a = *xp;
        let b = *xq;
        *xp = c * a - s * b;
        *xq = s * a + c * b;
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Fills empty columns (zero singular values) with unit vectors orthogonal to
/// every other column, by Gram-Schmidt over the standard basis.
fn complete_basis(cols: &mut [Vec<f64>], m: usize) {
    let mut candidate = 0;
    for i in 0..cols.len() {
        if !cols[i].is_empty() {
            continue;
        }
        loop {
            assert!(candidate < m, "ran out of basis candidates");
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            // Two passes keep the result orthogonal to working precision.
            for _ in 0..2 {
                for other in cols.iter().filter(|c| !c.is_empty()) {
                    let d: f64 = other.iter().zip(&e).map(|(a, b)| a * b).sum();
                    e.iter_mut().zip(other).for_each(|(x, o)| *x -= d * o);
                }
            }
            let nrm = norm(&e);
            if nrm > 1e-6 {
                cols[i] = e.into_iter().map(|x| x / nrm).collect();
                break;
            }
        }
    }
}
