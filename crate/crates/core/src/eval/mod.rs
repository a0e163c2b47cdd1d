//! Root-aligned and rigidly aligned MPJPE, per-action reports, noise sweeps
//! and the ablation harness.

mod ablation;
mod metrics;
mod report;

pub use ablation::{ablate, parse_variants, run_variant, AblationRow, AblationTable, Variant};
pub use metrics::{mpjpe, mpjpe_over, procrustes_align, procrustes_align_with, sse, AlignOptions, Alignment};
pub use report::{
    check_compatible, evaluate, evaluate_mean_pose, evaluate_oracle, evaluate_pairs, evaluate_with_frames, frame_error,
    frame_errors, frame_sse, noise_sweep, predict_mm, ActionScore, EvalOptions, EvalReport, EvalSettings, NoiseRow,
    NoiseSweep, Protocol, NOISE_STAGE,
};
