//! Dataset-to-trained-model glue shared by the CLI and the ablation harness.

use crate::data::{prepare_pairs, Dataset, Pairs, TargetFrame};
use crate::error::{Error, Result};
use crate::geometry::NormStats;
use crate::model::{Network, NetworkConfig};
use crate::numerics::{Matrix, Rng};

/// A freshly initialized network with its normalized training set.
#[derive(Debug, Clone)]
pub struct TrainingSetup {
    pub net: Network,
    pub stats: NormStats,
    pub pairs: Pairs,
    pub x: Matrix,
    pub y: Matrix,
}

/// Preprocesses `train` and fits statistics on it alone. The network is
/// initialized from `seed`.
pub fn setup_training(
    train: &Dataset,
    frame: TargetFrame,
    net_cfg: &NetworkConfig,
    seed: u64,
) -> Result<TrainingSetup> {
    if train.is_empty() {
        return Err(Error::Argument("training split is empty".into()));
    }
    let sk = &train.skeleton;
    if net_cfg.n_in_joints != sk.n_input_joints() || net_cfg.n_out_joints != sk.output_joints().len() {
        return Err(Error::Schema(format!(
            "network maps {} -> {} joints but the skeleton has {} input and {} output joints",
            net_cfg.n_in_joints,
            net_cfg.n_out_joints,
            sk.n_input_joints(),
            sk.output_joints().len()
        )));
    }
    let pairs = prepare_pairs(train, frame)?;
    let stats = NormStats::fit(&pairs.x2d, &pairs.y3d)?;
    let (x, y) = pairs.normalized(&stats)?;
    let net = Network::new(net_cfg.clone(), &mut Rng::new(seed))?;
    Ok(TrainingSetup {
        net,
        stats,
        pairs,
        x,
        y,
    })
}
