use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TargetFrame};
use crate::error::{Error, Result};
use crate::eval::report::{evaluate, EvalOptions, Protocol};
use crate::model::NetworkConfig;
use crate::optim::{train, TrainConfig};
use crate::pipeline::setup_training;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Base,
    NoBatchNorm,
    NoDropout,
    NoBatchNormNoDropout,
    NoResidual,
    NoCameraCoords,
    Blocks(usize),
}

impl Variant {
    /// The standard rows: each structural removal, then depth 1, 2, 4, 8.
    pub fn standard() -> Vec<Variant> {
        vec![
            Variant::Base,
            Variant::NoBatchNorm,
            Variant::NoDropout,
            Variant::NoBatchNormNoDropout,
            Variant::NoResidual,
            Variant::NoCameraCoords,
            Variant::Blocks(1),
            Variant::Blocks(2),
            Variant::Blocks(4),
            Variant::Blocks(8),
        ]
    }

    /// Network config and target frame for this variant of `base`.
    pub fn apply(&self, base: &NetworkConfig) -> (NetworkConfig, TargetFrame) {
        let mut cfg = base.clone();
        let mut frame = TargetFrame::Camera;
        match *self {
            Variant::Base => {}
            Variant::NoBatchNorm => cfg.batch_norm = false,
            Variant::NoDropout => cfg.keep_prob = 1.0,
            Variant::NoBatchNormNoDropout => {
                cfg.batch_norm = false;
                cfg.keep_prob = 1.0;
            }
            Variant::NoResidual => cfg.residual = false,
            Variant::NoCameraCoords => frame = TargetFrame::World,
            Variant::Blocks(n) => cfg.n_blocks = n,
        }
        (cfg, frame)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Base => f.write_str("base"),
            Variant::NoBatchNorm => f.write_str("no-batch-norm"),
            Variant::NoDropout => f.write_str("no-dropout"),
            Variant::NoBatchNormNoDropout => f.write_str("no-batch-norm-no-dropout"),
            Variant::NoResidual => f.write_str("no-residual"),
            Variant::NoCameraCoords => f.write_str("no-camera-coords"),
            Variant::Blocks(n) => write!(f, "blocks-{n}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = match s.trim() {
            "base" => Variant::Base,
            "no-batch-norm" => Variant::NoBatchNorm,
            "no-dropout" => Variant::NoDropout,
            "no-batch-norm-no-dropout" => Variant::NoBatchNormNoDropout,
            "no-residual" => Variant::NoResidual,
            "no-camera-coords" => Variant::NoCameraCoords,
            other => match other.strip_prefix("blocks-").map(str::parse::<usize>) {
                Some(Ok(n)) if [1, 2, 4, 8].contains(&n) => Variant::Blocks(n),
                _ => {
                    return Err(Error::Argument(format!(
                        "unknown ablation variant '{other}' (expected base, no-batch-norm, no-dropout, \
                         no-batch-norm-no-dropout, no-residual, no-camera-coords, blocks-1|2|4|8)"
                    )))
                }
            },
        };
        Ok(v)
    }
}

pub fn parse_variants<S: AsRef<str>>(names: &[S]) -> Result<Vec<Variant>> {
    names.iter().map(|s| s.as_ref().parse()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub mpjpe: f64,
    /// Relative to the base row, millimetres.
    pub delta_mm: f64,
    pub delta_pct: f64,
    pub param_count: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seed: u64,
    pub base_mpjpe: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        let name = variant.to_string();
        self.rows.iter().find(|r| r.variant == name)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<26} {:>10} {:>10} {:>9} {:>10}\n",
            "variant", "MPJPE(mm)", "delta(mm)", "delta(%)", "params"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<26} {:>10.2} {:>+10.2} {:>+9.1} {:>10}",
                r.variant, r.mpjpe, r.delta_mm, r.delta_pct, r.param_count
            );
        }
        s
    }
}

/// Trains one variant from `seed` and returns its protocol-1 test MPJPE,
/// parameter count and last training loss.
pub fn run_variant(
    variant: Variant,
    base: &NetworkConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    train_ds: &Dataset,
    test_ds: &Dataset,
) -> Result<(f64, usize, f64)> {
    let (net_cfg, frame) = variant.apply(base);
    let mut setup = setup_training(train_ds, frame, &net_cfg, seed)?;
    let cfg = TrainConfig {
        seed,
        ..train_cfg.clone()
    };
    let outcome = train(&mut setup.net, &setup.x, &setup.y, &cfg, &mut ())?;
    let opts = EvalOptions {
        protocol: Protocol::One,
        target_frame: frame,
        ..EvalOptions::default()
    };
    let report = evaluate(&setup.net, test_ds, &setup.stats, &opts)?;
    let final_loss = outcome.history.last().map_or(f64::NAN, |l| l.loss);
    Ok((report.overall_mpjpe, setup.net.param_count(), final_loss))
}

/// Trains the base model and every requested variant from the same seed.
/// `progress` sees each row as it completes.
pub fn ablate(
    base: &NetworkConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    train_ds: &Dataset,
    test_ds: &Dataset,
    variants: &[Variant],
    progress: &mut dyn FnMut(&AblationRow),
) -> Result<AblationTable> {
    let mut order = vec![Variant::Base];
    order.extend(variants.iter().copied().filter(|v| *v != Variant::Base));
    let mut rows: Vec<AblationRow> = Vec::with_capacity(order.len());
    let mut base_mpjpe = f64::NAN;
    for v in order {
        let (mpjpe, param_count, final_loss) = run_variant(v, base, train_cfg, seed, train_ds, test_ds)?;
        if v == Variant::Base {
            base_mpjpe = mpjpe;
        }
        let row = AblationRow {
            variant: v.to_string(),
            mpjpe,
            delta_mm: mpjpe - base_mpjpe,
            delta_pct: 100.0 * (mpjpe - base_mpjpe) / base_mpjpe,
            param_count,
            final_loss,
        };
        progress(&row);
        rows.push(row);
    }
    Ok(AblationTable { seed, base_mpjpe, rows })
}
