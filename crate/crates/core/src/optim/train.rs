use serde::{Deserialize, Serialize};

use crate::data::batch_indices;
use crate::error::{Error, Result};
use crate::model::{mse_loss, Mode, Network};
use crate::numerics::{Matrix, Rng};
use crate::optim::{adam_step, maxnorm_project, AdamState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Learning rate is multiplied by this every `decay_steps` optimizer steps
    /// (continuously interpolated).
    pub decay_factor: f64,
    pub decay_steps: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_norm_cap: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            decay_factor: 0.96,
            decay_steps: 100_000,
            batch_size: 64,
            epochs: 200,
            max_norm_cap: 1.0,
            seed: 1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Argument(m.to_string()));
        if !(self.lr0 > 0.0) {
            return bad("lr0 must be positive");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad("decay_factor must lie in (0, 1]");
        }
        if self.decay_steps == 0 {
            return bad("decay_steps must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.max_norm_cap > 0.0) {
            return bad("max_norm_cap must be positive");
        }
        Ok(())
    }
}

/// `lr0 · decay_factor^(step / decay_steps)`.
pub fn lr_at(config: &TrainConfig, step: u64) -> f64 {
    config.lr0 * config.decay_factor.powf(step as f64 / config.decay_steps as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<StepLog>,
    pub adam: AdamState,
}

/// Hooks into the training loop for logging, checks and checkpointing.
pub trait TrainObserver {
    fn on_step(&mut self, _log: &StepLog, _net: &Network) -> Result<()> {
        Ok(())
    }

    /// Called after the last step of each epoch (epochs count from 1).
    fn on_epoch_end(&mut self, _epoch: usize, _net: &Network) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Minimizes the batch MSE between `net(x)` and `y` (both normalized).
///
/// Every step runs forward, loss, backward, one Adam update at the scheduled
/// learning rate, and a max-norm projection of every linear layer.
pub fn train(
    net: &mut Network,
    x: &Matrix,
    y: &Matrix,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    if x.rows() == 0 {
        return Err(Error::Argument("training set is empty".into()));
    }
    if x.rows() != y.rows() {
        return Err(Error::Shape(format!("{} inputs but {} targets", x.rows(), y.rows())));
    }
    if y.cols() != net.config().output_dim() {
        return Err(Error::Shape(format!(
            "targets have {} columns, network predicts {}",
            y.cols(),
            net.config().output_dim()
        )));
    }

    let mut shuffle_rng = Rng::new(config.seed).child(0x5eed);
    let mut adam = AdamState::new(config.adam_beta1, config.adam_beta2, config.adam_eps);
    let mut history = Vec::new();
    let mut step: u64 = 0;

    for epoch in 1..=config.epochs {
        for idx in batch_indices(x.rows(), config.batch_size, &mut shuffle_rng)? {
            let xb = x.select_rows(&idx);
            let yb = y.select_rows(&idx);
            let pred = net.forward(&xb, Mode::Train)?;
            let (loss, grad) = mse_loss(&pred, &yb)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {loss} at step {step} (epoch {epoch})"
                )));
            }
            net.backward(&grad)?;
            let lr = lr_at(config, step);
            adam_step(&mut adam, &mut net.params_mut(), lr)?;
            for layer in net.linear_layers_mut() {
                maxnorm_project(layer, config.max_norm_cap);
            }
            let log = StepLog { step, epoch, lr, loss };
            observer.on_step(&log, net)?;
            history.push(log);
            step += 1;
        }
        observer.on_epoch_end(epoch, net)?;
    }
    net.clear_cache();
    Ok(TrainOutcome { history, adam })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_boundaries() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(&c, 0), c.lr0);
        assert!((lr_at(&c, c.decay_steps) - c.lr0 * c.decay_factor).abs() < 1e-18);
        let mut prev = f64::INFINITY;
        for s in (0..1_000_000).step_by(997) {
            let lr = lr_at(&c, s);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.batch_size = 1;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            decay_factor: 1.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            lr0: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn defaults_follow_the_published_recipe() {
        let c = TrainConfig::default();
        assert_eq!(c.lr0, 0.001);
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.epochs, 200);
        assert_eq!(c.max_norm_cap, 1.0);
    }
}
