#![allow(dead_code)]

pub mod geom;

use liftpose::data::{split, synth_generate, Dataset, Skeleton, TEST_SUBJECTS, TRAIN_SUBJECTS};
use liftpose::model::NetworkConfig;
use liftpose::Rng;

pub fn tags(t: &[&str]) -> Vec<String> {
    t.iter().map(|s| s.to_string()).collect()
}

/// `n_frames` synthetic samples split into the standard train/test subjects.
pub fn synth_split(n_frames: usize, n_cameras: usize, seed: u64) -> (Dataset, Dataset) {
    let ds = synth_generate(&Skeleton::h36m17(), n_frames, n_cameras, &mut Rng::new(seed)).unwrap();
    split(&ds, &tags(&TRAIN_SUBJECTS), &tags(&TEST_SUBJECTS)).unwrap()
}

pub fn small_net(h: usize) -> NetworkConfig {
    NetworkConfig {
        hidden_dim: h,
        ..NetworkConfig::default()
    }
}
