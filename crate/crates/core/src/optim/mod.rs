//! Initialization, Adam with exponential learning-rate decay, max-norm
//! projection, and the minibatch training loop.

mod adam;
mod train;

pub use adam::{adam_step, AdamState};
pub use train::{lr_at, train, StepLog, TrainConfig, TrainObserver, TrainOutcome};

use crate::model::Linear;
use crate::numerics::Rng;

const ROUNDING_SLACK: f64 = 1e-12;

/// Weights ~ N(0, 2 / fan_in), biases zero.
pub fn kaiming_init(rng: &mut Rng, layer: &mut Linear) {
    let std = (2.0 / layer.fan_in() as f64).sqrt();
    for w in layer.weight.data_mut() {
        *w = rng.normal(0.0, std);
    }
    layer.bias.fill(0.0);
}

/// Rescales every weight row whose L2 norm exceeds `cap` to norm `cap`.
/// Returns the number of rows that were rescaled.
///
/// Rows within rounding of the cap are left alone, so projecting twice
/// changes nothing.
pub fn maxnorm_project(layer: &mut Linear, cap: f64) -> usize {
    assert!(cap > 0.0, "max-norm cap must be positive");
    let mut clipped = 0;
    for r in 0..layer.weight.rows() {
        let row = layer.weight.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > cap * (1.0 + ROUNDING_SLACK) {
            let s = cap / norm;
            row.iter_mut().for_each(|v| *v *= s);
            clipped += 1;
        }
    }
    clipped
}

pub fn max_row_norm(layer: &Linear) -> f64 {
    layer
        .weight
        .row_iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}
