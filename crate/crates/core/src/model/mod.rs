//! The lifting network and its layers, plus the training loss.

pub mod layers;
mod network;

pub use layers::{BatchNorm, Dropout, Linear, Mode};
pub use network::{Block, Network, NetworkConfig, ParamKind, ParamSlot, Unit};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Mean squared error over every batch entry and coordinate, with its
/// gradient with respect to `pred`.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "loss: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let diff = pred.sub(target)?;
    let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff.scale(2.0 / n)))
}
