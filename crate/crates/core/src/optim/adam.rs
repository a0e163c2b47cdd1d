use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamSlot;

/// First and second moment estimates for every trainable tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl AdamState {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// One bias-corrected Adam update over `(value, grad)` pairs. Moment
    /// buffers are allocated on the first call and shape-checked afterwards.
    pub fn step<'a, I>(&mut self, pairs: I, lr: f64) -> Result<()>
    where
        I: IntoIterator<Item = (&'a mut [f64], &'a [f64])>,
    {
        if !(lr > 0.0) {
            return Err(Error::Argument(format!("learning rate {lr} must be positive")));
        }
        let mut pairs: Vec<_> = pairs.into_iter().collect();
        for (value, grad) in &pairs {
            if value.len() != grad.len() {
                return Err(Error::Shape(format!(
                    "parameter of {} entries has a gradient of {}",
                    value.len(),
                    grad.len()
                )));
            }
        }
        if self.m.is_empty() && self.t == 0 {
            self.m = pairs.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != pairs.len() || self.m.iter().zip(&pairs).any(|(m, (p, _))| m.len() != p.len()) {
            return Err(Error::Shape("parameter set does not match the optimizer state".into()));
        }

        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for ((value, grad), (m, v)) in pairs.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let lanes = value.iter_mut().zip(grad.iter()).zip(m.iter_mut().zip(v.iter_mut()));
            for ((p, &g), (m, v)) in lanes {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Applies one Adam update to the network's trainable tensors.
pub fn adam_step(state: &mut AdamState, params: &mut [ParamSlot<'_>], lr: f64) -> Result<()> {
    state.step(params.iter_mut().map(|p| (&mut *p.value, p.grad)), lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_about_lr() {
        let mut s = AdamState::default();
        let mut p = [1.0, -2.0, 0.5, 3.0];
        let g = [0.3, -7.0, 1e-3, 100.0];
        let before = p;
        s.step([(&mut p[..], &g[..])], 1e-3).unwrap();
        for i in 0..4 {
            let expect = 1e-3 * g[i].abs() / (g[i].abs() + 1e-8);
            let moved = (before[i] - p[i]).abs();
            assert!((moved - expect).abs() < 1e-15, "{moved} vs {expect}");
            assert_eq!((before[i] - p[i]).signum(), g[i].signum());
        }
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::default();
        let mut p = [1.0, 2.0];
        let g = [0.0, 0.0];
        s.step([(&mut p[..], &g[..])], 1e-3).unwrap();
        assert_eq!(p, [1.0, 2.0]);
        assert!(s.v[0].iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::default();
        let mut p = [1.0, 2.0];
        let g = [0.0];
        assert!(matches!(s.step([(&mut p[..], &g[..])], 1e-3), Err(Error::Shape(_))));

        let mut s = AdamState::default();
        let g2 = [0.1, 0.1];
        s.step([(&mut p[..], &g2[..])], 1e-3).unwrap();
        let mut q = [1.0; 3];
        let g3 = [0.1; 3];
        assert!(matches!(s.step([(&mut q[..], &g3[..])], 1e-3), Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_nonpositive_lr() {
        let mut s = AdamState::default();
        let mut p = [1.0];
        let g = [1.0];
        assert!(s.step([(&mut p[..], &g[..])], 0.0).is_err());
    }
}
