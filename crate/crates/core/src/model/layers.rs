//! Layer primitives with hand-written backward passes.
//!
//! Each stateful layer caches what its backward pass needs during a
//! train-mode forward. The free functions are the same computations without
//! state, for tests and gradient checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gemm, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

// ---------------------------------------------------------------------------
// Linear

/// Fully connected layer, `y = x·Wᵀ + b` with `W` stored `out x in`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub grad_weight: Matrix,
    pub grad_bias: Vec<f64>,
    input: Option<Matrix>,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(fan_out, fan_in),
            bias: vec![0.0; fan_out],
            grad_weight: Matrix::zeros(fan_out, fan_in),
            grad_bias: vec![0.0; fan_out],
            input: None,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        let y = linear_forward(x, &self.weight, &self.bias)?;
        self.input = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        linear_forward(x, &self.weight, &self.bias)
    }

    /// Overwrites the gradient buffers and returns `dL/dx`.
    pub fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::State("linear backward without a cached train-mode forward".into()))?;
        linear_backward_into(x, &self.weight, dy, &mut self.grad_weight, &mut self.grad_bias)
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.data_mut().fill(0.0);
        self.grad_bias.fill(0.0);
    }

    pub(crate) fn clear_cache(&mut self) {
        self.input = None;
    }
}

pub fn linear_forward(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    if x.cols() != w.cols() {
        return Err(Error::Shape(format!(
            "linear layer expects {} input features, got {}",
            w.cols(),
            x.cols()
        )));
    }
    let mut y = Matrix::zeros(x.rows(), w.rows());
    gemm(1.0, x, false, w, true, 0.0, &mut y)?;
    for r in 0..y.rows() {
        y.row_mut(r).iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
    }
    Ok(y)
}

/// Returns `(dW, db, dx)`.
pub fn linear_backward(x: &Matrix, w: &Matrix, dy: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let mut dw = Matrix::zeros(w.rows(), w.cols());
    let mut db = vec![0.0; w.rows()];
    let dx = linear_backward_into(x, w, dy, &mut dw, &mut db)?;
    Ok((dw, db, dx))
}

fn linear_backward_into(x: &Matrix, w: &Matrix, dy: &Matrix, dw: &mut Matrix, db: &mut [f64]) -> Result<Matrix> {
    if dy.rows() != x.rows() || dy.cols() != w.rows() {
        return Err(Error::Shape(format!(
            "linear backward: upstream {:?} does not match batch {} x out {}",
            dy.shape(),
            x.rows(),
            w.rows()
        )));
    }
    gemm(1.0, dy, true, x, false, 0.0, dw)?;
    db.fill(0.0);
    for row in dy.row_iter() {
        db.iter_mut().zip(row).for_each(|(g, v)| *g += v);
    }
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    gemm(1.0, dy, false, w, false, 0.0, &mut dx)?;
    Ok(dx)
}

// ---------------------------------------------------------------------------
// ReLU

pub fn relu_forward(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Gradient through a RELU given its forward output.
pub fn relu_backward(out: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = dy.clone();
    dx.data_mut().iter_mut().zip(out.data()).for_each(|(g, o)| {
        if *o <= 0.0 {
            *g = 0.0;
        }
    });
    dx
}

// ---------------------------------------------------------------------------
// Batch normalization

/// Values the backward pass needs from one batch-norm forward.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Matrix,
    pub inv_std: Vec<f64>,
    /// True when the forward normalized by batch statistics.
    pub batch_stats: bool,
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    /// Weight of the newest batch in the running-statistic average.
    pub momentum: f64,
    /// Train-mode forwards use the running statistics and leave them alone.
    pub frozen_stats: bool,
    cache: Option<BnCache>,
}

impl BatchNorm {
    pub fn new(dim: usize, eps: f64, momentum: f64) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            grad_gamma: vec![0.0; dim],
            grad_beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            eps,
            momentum,
            frozen_stats: false,
            cache: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        self.check_width(x)?;
        if mode == Mode::Eval {
            self.cache = None;
            return Ok(self.predict(x));
        }
        let (y, cache) = if self.frozen_stats {
            bn_forward_fixed(
                x,
                &self.gamma,
                &self.beta,
                &self.running_mean,
                &self.running_var,
                self.eps,
            )
        } else {
            let (y, cache, mean, var) = bn_forward_train(x, &self.gamma, &self.beta, self.eps)?;
            let n = x.rows() as f64;
            let m = self.momentum;
            for j in 0..self.dim() {
                self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * mean[j];
                // unbiased estimate for the running variance
                self.running_var[j] = (1.0 - m) * self.running_var[j] + m * var[j] * n / (n - 1.0);
            }
            (y, cache)
        };
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn predict(&self, x: &Matrix) -> Matrix {
        bn_forward_fixed(
            x,
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            self.eps,
        )
        .0
    }

    pub fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("batch norm backward without a cached train-mode forward".into()))?;
        let (dx, dg, db) = bn_backward(cache, &self.gamma, dy)?;
        self.grad_gamma = dg;
        self.grad_beta = db;
        Ok(dx)
    }

    pub fn zero_grad(&mut self) {
        self.grad_gamma.fill(0.0);
        self.grad_beta.fill(0.0);
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn check_width(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::Shape(format!(
                "batch norm over {} features got {}",
                self.dim(),
                x.cols()
            )));
        }
        Ok(())
    }
}

/// Normalizes by the batch's own (biased) statistics.
///
/// Returns the output and backward cache along with the batch mean and variance.
pub fn bn_forward_train(
    x: &Matrix,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(Matrix, BnCache, Vec<f64>, Vec<f64>)> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::Argument(format!(
            "batch norm in train mode needs at least 2 rows, got {n}"
        )));
    }
    let d = x.cols();
    let mut mean = vec![0.0; d];
    for row in x.row_iter() {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for row in x.row_iter() {
        for j in 0..d {
            let c = row[j] - mean[j];
            var[j] += c * c;
        }
    }
    var.iter_mut().for_each(|v| *v /= n as f64);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = Matrix::zeros(n, d);
    let mut y = Matrix::zeros(n, d);
    for r in 0..n {
        let xr = x.row(r);
        for j in 0..d {
            let h = (xr[j] - mean[j]) * inv_std[j];
            xhat[(r, j)] = h;
            y[(r, j)] = gamma[j] * h + beta[j];
        }
    }
    Ok((
        y,
        BnCache {
            xhat,
            inv_std,
            batch_stats: true,
        },
        mean,
        var,
    ))
}

/// Normalizes by fixed statistics (eval mode, or frozen train mode).
pub fn bn_forward_fixed(
    x: &Matrix,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> (Matrix, BnCache) {
    let d = x.cols();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = Matrix::zeros(x.rows(), d);
    let mut y = Matrix::zeros(x.rows(), d);
    for r in 0..x.rows() {
        let xr = x.row(r);
        for j in 0..d {
            let h = (xr[j] - mean[j]) * inv_std[j];
            xhat[(r, j)] = h;
            y[(r, j)] = gamma[j] * h + beta[j];
        }
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            batch_stats: false,
        },
    )
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn bn_backward(cache: &BnCache, gamma: &[f64], dy: &Matrix) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
    let (n, d) = cache.xhat.shape();
    if dy.shape() != (n, d) {
        return Err(Error::Shape(format!(
            "batch norm backward: upstream {:?} vs cached {:?}",
            dy.shape(),
            (n, d)
        )));
    }
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    for r in 0..n {
        let dyr = dy.row(r);
        let hr = cache.xhat.row(r);
        for j in 0..d {
            dgamma[j] += dyr[j] * hr[j];
            dbeta[j] += dyr[j];
        }
    }
    let mut dx = Matrix::zeros(n, d);
    if cache.batch_stats {
        // dx = inv_std/N · (N·dxhat − Σdxhat − xhat·Σ(dxhat·xhat)), dxhat = γ·dy
        let nf = n as f64;
        for r in 0..n {
            let dyr = dy.row(r);
            let hr = cache.xhat.row(r);
            let out = dx.row_mut(r);
            for j in 0..d {
                let g = gamma[j];
                out[j] = cache.inv_std[j] / nf * (nf * g * dyr[j] - g * dbeta[j] - hr[j] * g * dgamma[j]);
            }
        }
    } else {
        for r in 0..n {
            let dyr = dy.row(r);
            let out = dx.row_mut(r);
            for j in 0..d {
                out[j] = dyr[j] * gamma[j] * cache.inv_std[j];
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

// ---------------------------------------------------------------------------
// Dropout

/// Inverted dropout: surviving units are scaled by `1 / keep_prob`.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub keep_prob: f64,
    /// When set, train-mode forwards reuse this mask instead of drawing one.
    pub frozen_mask: Option<Matrix>,
    mask: Option<Matrix>,
    cached: bool,
}

impl Dropout {
    pub fn new(keep_prob: f64) -> Result<Self> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(Error::Argument(format!(
                "dropout keep probability {keep_prob} is outside (0, 1]"
            )));
        }
        Ok(Self {
            keep_prob,
            frozen_mask: None,
            mask: None,
            cached: false,
        })
    }

    pub fn forward(&mut self, x: &Matrix, mode: Mode, rng: &mut Rng) -> Result<Matrix> {
        self.cached = mode == Mode::Train;
        if mode == Mode::Eval {
            self.mask = None;
            return Ok(x.clone());
        }
        let mask = match &self.frozen_mask {
            Some(m) => {
                if m.shape() != x.shape() {
                    return Err(Error::Shape(format!(
                        "frozen dropout mask {:?} vs input {:?}",
                        m.shape(),
                        x.shape()
                    )));
                }
                Some(m.clone())
            }
            None if self.keep_prob < 1.0 => Some(dropout_mask(rng, self.keep_prob, x.rows(), x.cols())),
            None => None,
        };
        let y = match &mask {
            Some(m) => dropout_forward(x, m)?,
            None => x.clone(),
        };
        self.mask = mask;
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        if !self.cached {
            return Err(Error::State(
                "dropout backward without a cached train-mode forward".into(),
            ));
        }
        match &self.mask {
            Some(m) => dropout_backward(m, dy),
            None => Ok(dy.clone()),
        }
    }

    pub(crate) fn clear_cache(&mut self) {
        self.mask = None;
        self.cached = false;
    }
}

/// Mask with entries `1/keep_prob` (probability `keep_prob`) or `0`.
pub fn dropout_mask(rng: &mut Rng, keep_prob: f64, rows: usize, cols: usize) -> Matrix {
    let scale = 1.0 / keep_prob;
    let data = (0..rows * cols)
        .map(|_| if rng.bernoulli(keep_prob) { scale } else { 0.0 })
        .collect();
    Matrix::new(rows, cols, data).expect("mask size matches")
}

pub fn dropout_forward(x: &Matrix, mask: &Matrix) -> Result<Matrix> {
    if x.shape() != mask.shape() {
        return Err(Error::Shape(format!(
            "dropout mask {:?} vs input {:?}",
            mask.shape(),
            x.shape()
        )));
    }
    let mut y = x.clone();
    y.data_mut().iter_mut().zip(mask.data()).for_each(|(v, m)| *v *= m);
    Ok(y)
}

pub fn dropout_backward(mask: &Matrix, dy: &Matrix) -> Result<Matrix> {
    dropout_forward(dy, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_definition() {
        let x = Matrix::row_vector(&[-1.0, 0.0, 2.0]);
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_backward_masks_inactive() {
        let x = Matrix::row_vector(&[-1.0, 0.0, 2.0]);
        let y = relu_forward(&x);
        let dy = Matrix::row_vector(&[5.0, 6.0, 7.0]);
        assert_eq!(relu_backward(&y, &dy).data(), &[0.0, 0.0, 7.0]);
    }

    #[test]
    fn bn_train_output_is_standardized() {
        let mut rng = Rng::new(4);
        let x = rng.gauss_matrix(3.0, 2.0, 64, 10).unwrap();
        let d = x.cols();
        let (_, cache, _, _) = bn_forward_train(&x, &vec![1.0; d], &vec![0.0; d], 1e-5).unwrap();
        for j in 0..d {
            let col = cache.xhat.column(j);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() <= 1e-6);
            assert!((var - 1.0).abs() <= 1e-4);
        }
    }

    #[test]
    fn bn_train_rejects_single_row() {
        let x = Matrix::zeros(1, 3);
        let r = bn_forward_train(&x, &[1.0; 3], &[0.0; 3], 1e-5);
        assert!(matches!(r, Err(Error::Argument(_))));
        let mut bn = BatchNorm::new(3, 1e-5, 0.1);
        assert!(bn.forward(&x, Mode::Train).is_err());
        // eval mode is fine with one row
        assert!(bn.forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn bn_running_stats_move_toward_batch() {
        let mut rng = Rng::new(8);
        let x = rng.gauss_matrix(5.0, 3.0, 32, 4).unwrap();
        let mut bn = BatchNorm::new(4, 1e-5, 0.1);
        for _ in 0..200 {
            bn.forward(&x, Mode::Train).unwrap();
        }
        for j in 0..4 {
            let col = x.column(j);
            let mean = col.iter().sum::<f64>() / 32.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 31.0;
            assert!((bn.running_mean[j] - mean).abs() < 1e-6);
            assert!((bn.running_var[j] - var).abs() < 1e-6);
            assert!(bn.running_var[j] >= 0.0);
        }
    }

    #[test]
    fn bn_eval_uses_running_stats_only() {
        let mut bn = BatchNorm::new(2, 0.0, 0.1);
        bn.running_mean = vec![1.0, -1.0];
        bn.running_var = vec![4.0, 1.0];
        let x = Matrix::from_rows(&[[3.0, 0.0]]).unwrap();
        let y = bn.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0]);
    }

    #[test]
    fn dropout_keep_one_is_identity() {
        let mut d = Dropout::new(1.0).unwrap();
        let mut rng = Rng::new(0);
        let x = Matrix::from_fn(3, 4, |r, c| r as f64 - c as f64);
        assert_eq!(d.forward(&x, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(d.backward(&x).unwrap(), x);
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut d = Dropout::new(0.3).unwrap();
        let mut rng = Rng::new(0);
        let x = Matrix::from_fn(3, 4, |r, c| (r * c) as f64 + 1.0);
        assert_eq!(d.forward(&x, Mode::Eval, &mut rng).unwrap(), x);
    }

    #[test]
    fn dropout_mask_values() {
        let mut rng = Rng::new(1);
        let m = dropout_mask(&mut rng, 0.25, 50, 50);
        assert!(m.data().iter().all(|v| *v == 0.0 || *v == 4.0));
        let kept = m.data().iter().filter(|v| **v > 0.0).count() as f64 / 2500.0;
        assert!((kept - 0.25).abs() < 0.05);
    }

    #[test]
    fn dropout_rejects_bad_keep_prob() {
        assert!(Dropout::new(0.0).is_err());
        assert!(Dropout::new(1.5).is_err());
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut l = Linear::zeros(2, 2);
        assert!(matches!(l.backward(&Matrix::zeros(1, 2)), Err(Error::State(_))));
        let mut bn = BatchNorm::new(2, 1e-5, 0.1);
        assert!(matches!(bn.backward(&Matrix::zeros(2, 2)), Err(Error::State(_))));
        let mut d = Dropout::new(0.5).unwrap();
        assert!(matches!(d.backward(&Matrix::zeros(2, 2)), Err(Error::State(_))));
    }

    #[test]
    fn linear_shape_error() {
        let l = Linear::zeros(3, 2);
        assert!(matches!(l.predict(&Matrix::zeros(1, 4)), Err(Error::Shape(_))));
    }
}
