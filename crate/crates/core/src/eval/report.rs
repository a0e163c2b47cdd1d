use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::checkpoint::fingerprint;
use crate::data::{insert_root, prepare_pairs, Dataset, Pairs, Skeleton, TargetFrame};
use crate::error::{Error, Result};
use crate::eval::metrics::{mpjpe, procrustes_align_with, sse, AlignOptions};
use crate::geometry::{add_noise, NormStats};
use crate::model::Network;
use crate::numerics::{KahanSum, Matrix, Rng};

/// Where pixel noise enters relative to normalization.
pub const NOISE_STAGE: &str = "raw-pixels-then-training-stats";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(try_from = "u8", into = "u8")]
pub enum Protocol {
    /// Root-aligned only.
    #[default]
    One,
    /// Rigidly aligned per frame.
    Two,
}

impl TryFrom<u8> for Protocol {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Protocol::One),
            2 => Ok(Protocol::Two),
            _ => Err(Error::Argument(format!("protocol must be 1 or 2, got {v}"))),
        }
    }
}

impl From<Protocol> for u8 {
    fn from(p: Protocol) -> u8 {
        match p {
            Protocol::One => 1,
            Protocol::Two => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub protocol: Protocol,
    /// Count the (always zero) root joint in the average.
    pub include_root: bool,
    /// Similarity instead of rigid alignment under protocol 2.
    pub with_scale: bool,
    pub target_frame: TargetFrame,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            protocol: Protocol::One,
            include_root: false,
            with_scale: false,
            target_frame: TargetFrame::Camera,
        }
    }
}

/// Settings a report was produced under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub include_root: bool,
    pub with_scale: bool,
    pub target_frame: TargetFrame,
    pub noise_sigma: f64,
    pub noise_stage: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionScore {
    pub mpjpe: f64,
    pub n_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub per_action: BTreeMap<String, ActionScore>,
    /// Frame-weighted mean of the per-action values.
    pub overall_mpjpe: f64,
    pub n_frames: usize,
    pub fingerprint: String,
    pub settings: EvalSettings,
}

impl EvalReport {
    /// Aggregates per-frame errors by action.
    pub fn from_frames(
        protocol: Protocol,
        actions: &[String],
        errors: &[f64],
        fingerprint: String,
        settings: EvalSettings,
    ) -> Result<Self> {
        if actions.len() != errors.len() {
            return Err(Error::Shape(format!(
                "{} tags for {} frames",
                actions.len(),
                errors.len()
            )));
        }
        let mut sums: BTreeMap<String, (KahanSum, usize)> = BTreeMap::new();
        for (a, e) in actions.iter().zip(errors) {
            let entry = sums.entry(a.clone()).or_default();
            entry.0.add(*e);
            entry.1 += 1;
        }
        let per_action: BTreeMap<String, ActionScore> = sums
            .into_iter()
            .map(|(a, (s, n))| {
                (
                    a,
                    ActionScore {
                        mpjpe: s.total() / n as f64,
                        n_frames: n,
                    },
                )
            })
            .collect();
        let n_frames = errors.len();
        let overall = per_action
            .values()
            .map(|s| s.mpjpe * s.n_frames as f64)
            .collect::<KahanSum>()
            .total();
        Ok(Self {
            protocol,
            per_action,
            overall_mpjpe: if n_frames == 0 { 0.0 } else { overall / n_frames as f64 },
            n_frames,
            fingerprint,
            settings,
        })
    }

    /// Text table: one column per action plus the average, in millimetres.
    pub fn to_table(&self) -> String {
        let label = format!("Protocol #{}", u8::from(self.protocol));
        let mut head = format!("{label:<14}");
        let mut row = format!("{:<14}", "MPJPE (mm)");
        for (action, score) in &self.per_action {
            let w = action.len().max(8);
            let _ = write!(head, " {action:>w$}");
            let _ = write!(row, " {:>w$.2}", score.mpjpe);
        }
        let _ = write!(head, " {:>8}", "Avg");
        let _ = write!(row, " {:>8.2}", self.overall_mpjpe);
        format!("{head}\n{row}\n")
    }
}

/// Per-frame squared residuals `(protocol 1, protocol 2)` over the evaluated
/// joints. The rigid fit uses the same joints, so the second never exceeds
/// the first except by rounding.
pub fn frame_sse(skeleton: &Skeleton, pred_flat: &[f64], gt_flat: &[f64], opts: &EvalOptions) -> Result<(f64, f64)> {
    let (pred, gt) = joint_sets(skeleton, pred_flat, gt_flat, opts.include_root)?;
    let aligned = procrustes_align_with(
        &pred,
        &gt,
        AlignOptions {
            with_scale: opts.with_scale,
        },
    )?
    .aligned;
    Ok((sse(&pred, &gt)?, sse(&aligned, &gt)?))
}

fn joint_sets(skeleton: &Skeleton, pred_flat: &[f64], gt_flat: &[f64], include_root: bool) -> Result<(Matrix, Matrix)> {
    let pred = insert_root(skeleton, pred_flat)?;
    let gt = insert_root(skeleton, gt_flat)?;
    if include_root {
        Ok((pred, gt))
    } else {
        let j = skeleton.output_joints();
        Ok((pred.select_rows(&j), gt.select_rows(&j)))
    }
}

/// MPJPE of one frame given root-dropped flat predictions and targets (mm).
pub fn frame_error(skeleton: &Skeleton, pred_flat: &[f64], gt_flat: &[f64], opts: &EvalOptions) -> Result<f64> {
    let (pred, gt) = joint_sets(skeleton, pred_flat, gt_flat, opts.include_root)?;
    match opts.protocol {
        Protocol::One => mpjpe(&pred, &gt),
        Protocol::Two => {
            let a = procrustes_align_with(
                &pred,
                &gt,
                AlignOptions {
                    with_scale: opts.with_scale,
                },
            )?;
            mpjpe(&a.aligned, &gt)
        }
    }
}

/// Per-frame errors for a matrix of predictions against `pairs.y3d`.
pub fn frame_errors(skeleton: &Skeleton, pred: &Matrix, gt: &Matrix, opts: &EvalOptions) -> Result<Vec<f64>> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs targets {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    (0..pred.rows())
        .map(|i| frame_error(skeleton, pred.row(i), gt.row(i), opts))
        .collect()
}

fn settings(opts: &EvalOptions, sigma: f64) -> EvalSettings {
    EvalSettings {
        include_root: opts.include_root,
        with_scale: opts.with_scale,
        target_frame: opts.target_frame,
        noise_sigma: sigma,
        noise_stage: NOISE_STAGE.into(),
    }
}

/// Network predictions in millimetres for raw pixel inputs.
pub fn predict_mm(net: &Network, stats: &NormStats, x2d: &Matrix) -> Result<Matrix> {
    const CHUNK: usize = 4096;
    let mut parts = Vec::new();
    let mut start = 0;
    while start < x2d.rows() {
        let idx: Vec<usize> = (start..(start + CHUNK).min(x2d.rows())).collect();
        let xn = stats.normalize_inputs(&x2d.select_rows(&idx))?;
        parts.push(stats.denormalize_targets(&net.predict(&xn)?)?);
        start += CHUNK;
    }
    if parts.is_empty() {
        return Ok(Matrix::zeros(0, net.config().output_dim()));
    }
    Matrix::vstack(&parts)
}

/// Checks that network, statistics and skeleton agree on joint counts.
pub fn check_compatible(net: &Network, stats: &NormStats, skeleton: &Skeleton) -> Result<()> {
    let c = net.config();
    let n_out = skeleton.output_joints().len();
    if c.n_in_joints != skeleton.n_input_joints() || c.n_out_joints != n_out {
        return Err(Error::Schema(format!(
            "model maps {} -> {} joints but the dataset skeleton has {} input and {} output joints",
            c.n_in_joints,
            c.n_out_joints,
            skeleton.n_input_joints(),
            n_out
        )));
    }
    if stats.mean2d.len() != c.input_dim() || stats.mean3d.len() != c.output_dim() {
        return Err(Error::Schema("normalization statistics do not match the model".into()));
    }
    Ok(())
}

fn score(
    net: &Network,
    stats: &NormStats,
    skeleton: &Skeleton,
    x2d: &Matrix,
    pairs: &Pairs,
    opts: &EvalOptions,
    sigma: f64,
) -> Result<(EvalReport, Vec<f64>)> {
    check_compatible(net, stats, skeleton)?;
    let pred = predict_mm(net, stats, x2d)?;
    let errors = frame_errors(skeleton, &pred, &pairs.y3d, opts)?;
    let report = EvalReport::from_frames(
        opts.protocol,
        &pairs.actions,
        &errors,
        fingerprint(net, stats),
        settings(opts, sigma),
    )?;
    Ok((report, errors))
}

/// Evaluates prepared pairs (raw pixels and millimetres).
pub fn evaluate_pairs(
    net: &Network,
    stats: &NormStats,
    skeleton: &Skeleton,
    pairs: &Pairs,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    Ok(score(net, stats, skeleton, &pairs.x2d, pairs, opts, 0.0)?.0)
}

/// Like [`evaluate`], also returning each test frame's error in dataset order.
pub fn evaluate_with_frames(
    net: &Network,
    test: &Dataset,
    stats: &NormStats,
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<f64>)> {
    check_compatible(net, stats, &test.skeleton)?;
    let pairs = prepare_pairs(test, opts.target_frame)?;
    score(net, stats, &test.skeleton, &pairs.x2d, &pairs, opts, 0.0)
}

/// Runs the network over every test sample and scores it.
pub fn evaluate(net: &Network, test: &Dataset, stats: &NormStats, opts: &EvalOptions) -> Result<EvalReport> {
    check_compatible(net, stats, &test.skeleton)?;
    let pairs = prepare_pairs(test, opts.target_frame)?;
    evaluate_pairs(net, stats, &test.skeleton, &pairs, opts)
}

/// Scores the ground truth against itself (always zero); exercises the
/// metric path without a model.
pub fn evaluate_oracle(test: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    let pairs = prepare_pairs(test, opts.target_frame)?;
    let errors = frame_errors(&test.skeleton, &pairs.y3d, &pairs.y3d, opts)?;
    EvalReport::from_frames(
        opts.protocol,
        &pairs.actions,
        &errors,
        "oracle".into(),
        settings(opts, 0.0),
    )
}

/// Predicts the training-set mean pose for every test frame.
pub fn evaluate_mean_pose(train: &Pairs, test: &Pairs, skeleton: &Skeleton, opts: &EvalOptions) -> Result<EvalReport> {
    if train.is_empty() {
        return Err(Error::Argument("mean pose needs training samples".into()));
    }
    let w = train.y3d.cols();
    let mean: Vec<f64> = (0..w)
        .map(|c| train.y3d.column(c).into_iter().collect::<KahanSum>().total() / train.len() as f64)
        .collect();
    let pred = Matrix::from_fn(test.len(), w, |_, c| mean[c]);
    let errors = frame_errors(skeleton, &pred, &test.y3d, opts)?;
    EvalReport::from_frames(
        opts.protocol,
        &test.actions,
        &errors,
        "mean-pose".into(),
        settings(opts, 0.0),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub sigma: f64,
    pub mpjpe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweep {
    pub protocol: Protocol,
    pub fingerprint: String,
    pub noise_stage: String,
    pub noise_seed: u64,
    pub rows: Vec<NoiseRow>,
    pub reports: Vec<EvalReport>,
}

impl NoiseSweep {
    pub fn to_table(&self) -> String {
        let mut s = format!("{:>10} {:>12}\n", "sigma(px)", "MPJPE(mm)");
        for r in &self.rows {
            let _ = writeln!(s, "{:>10.2} {:>12.2}", r.sigma, r.mpjpe);
        }
        s
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].mpjpe >= w[0].mpjpe)
    }
}

/// Protocol-2 error as Gaussian pixel noise grows.
///
/// Every level reuses one standard-normal draw scaled by its sigma, so the
/// rows differ only in noise magnitude.
pub fn noise_sweep(
    net: &Network,
    test: &Dataset,
    stats: &NormStats,
    sigmas: &[f64],
    rng: &mut Rng,
    opts: &EvalOptions,
) -> Result<NoiseSweep> {
    check_compatible(net, stats, &test.skeleton)?;
    let opts = EvalOptions {
        protocol: Protocol::Two,
        ..opts.clone()
    };
    let pairs = prepare_pairs(test, opts.target_frame)?;
    let noise_seed = rng.next_u64();
    let mut rows = Vec::with_capacity(sigmas.len());
    let mut reports = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let x = add_noise(&pairs.x2d, sigma, &mut Rng::new(noise_seed))?;
        let (report, _) = score(net, stats, &test.skeleton, &x, &pairs, &opts, sigma)?;
        rows.push(NoiseRow {
            sigma,
            mpjpe: report.overall_mpjpe,
        });
        reports.push(report);
    }
    Ok(NoiseSweep {
        protocol: Protocol::Two,
        fingerprint: fingerprint(net, stats),
        noise_stage: NOISE_STAGE.into(),
        noise_seed,
        rows,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overall_is_weighted_mean() {
        let actions: Vec<String> = ["a", "a", "b", "c", "c", "c"].map(String::from).to_vec();
        let errors = [1.0, 3.0, 10.0, 0.5, 0.25, 0.125];
        let s = settings(&EvalOptions::default(), 0.0);
        let r = EvalReport::from_frames(Protocol::One, &actions, &errors, String::new(), s).unwrap();
        assert_eq!(r.per_action["a"].mpjpe, 2.0);
        assert_eq!(r.per_action["c"].n_frames, 3);
        let mean = errors.iter().sum::<f64>() / 6.0;
        assert!((r.overall_mpjpe - mean).abs() <= 1e-12);
        assert!(r.to_table().contains("Avg"));
    }

    #[test]
    fn protocol_serializes_as_number() {
        assert_eq!(serde_json::to_string(&Protocol::Two).unwrap(), "2");
        assert!(serde_json::from_str::<Protocol>("3").is_err());
    }
}
