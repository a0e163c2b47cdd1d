//! Skeletons, pose datasets and their files, synthetic mocap, preprocessing
//! into network pairs, and minibatching.

mod batch;
mod dataset;
mod prepare;
mod skeleton;
mod synth;

pub use batch::{batch_indices, batches};
pub use dataset::{load, save, split, Dataset, PoseSample, DATASET_SCHEMA, DATASET_SCHEMA_VERSION};
pub use prepare::{drop_root, insert_root, prepare_pairs, sample_input, sample_pose, Pairs, TargetFrame};
pub use skeleton::Skeleton;
pub use synth::{
    angle_limits, pose_from_angles, ring_cameras, subject_bone_lengths, synth_generate, synth_generate_with,
    AngleLimits, SynthConfig,
};

/// Training subjects of the standard split.
pub const TRAIN_SUBJECTS: [&str; 5] = ["S1", "S5", "S6", "S7", "S8"];
/// Held-out subjects of the standard split.
pub const TEST_SUBJECTS: [&str; 2] = ["S9", "S11"];
