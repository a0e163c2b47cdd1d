//! The one preprocessing path shared by training, evaluation and prediction:
//! world → camera → root-centred → root dropped, then normalized.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PoseSample, Skeleton};
use crate::error::{Error, Result};
use crate::geometry::{project, root_center, world_to_camera, Camera, NormStats};
use crate::numerics::Matrix;

/// Coordinate frame the 3d targets are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TargetFrame {
    /// Rotated into the observing camera's frame.
    #[default]
    Camera,
    /// Left in the world frame (only root-centred).
    World,
}

/// Raw (unnormalized) network pairs, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Pairs {
    /// `N x 2n_in`, pixels.
    pub x2d: Matrix,
    /// `N x 3(n-1)`, millimetres, root-centred with the root row removed.
    pub y3d: Matrix,
    pub actions: Vec<String>,
    pub subjects: Vec<String>,
}

impl Pairs {
    pub fn len(&self) -> usize {
        self.x2d.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x2d.rows() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Pairs {
        Pairs {
            x2d: self.x2d.select_rows(idx),
            y3d: self.y3d.select_rows(idx),
            actions: idx.iter().map(|&i| self.actions[i].clone()).collect(),
            subjects: idx.iter().map(|&i| self.subjects[i].clone()).collect(),
        }
    }

    /// `(normalize(x2d), normalize(y3d))` under `stats`.
    pub fn normalized(&self, stats: &NormStats) -> Result<(Matrix, Matrix)> {
        Ok((stats.normalize_inputs(&self.x2d)?, stats.normalize_targets(&self.y3d)?))
    }
}

/// 2d input row for one sample: stored joints when present, otherwise the
/// exact projection of the 3d pose.
pub fn sample_input(skeleton: &Skeleton, sample: &PoseSample, cam: &Camera) -> Result<Vec<f64>> {
    match &sample.joints2d {
        Some(j2) => Ok(j2.data().to_vec()),
        None => {
            let uv = project(&world_to_camera(&sample.joints3d_world, cam)?, cam)?;
            Ok(uv.select_rows(&skeleton.input_joint_map).into_data())
        }
    }
}

/// Root-centred 3d pose in `frame`, all joints (root row zero).
pub fn sample_pose(skeleton: &Skeleton, sample: &PoseSample, cam: &Camera, frame: TargetFrame) -> Result<Matrix> {
    let p = match frame {
        TargetFrame::Camera => world_to_camera(&sample.joints3d_world, cam)?,
        TargetFrame::World => sample.joints3d_world.clone(),
    };
    root_center(&p, skeleton.root_idx)
}

/// Flattened network target: the centred pose without its root row.
pub fn drop_root(skeleton: &Skeleton, pose: &Matrix) -> Vec<f64> {
    pose.select_rows(&skeleton.output_joints()).into_data()
}

/// Inverse of [`drop_root`]: puts a zero root back at `root_idx`.
pub fn insert_root(skeleton: &Skeleton, flat: &[f64]) -> Result<Matrix> {
    let out_joints = skeleton.output_joints();
    if flat.len() != 3 * out_joints.len() {
        return Err(Error::Shape(format!(
            "{} predicted values for {} output joints",
            flat.len(),
            out_joints.len()
        )));
    }
    let mut pose = Matrix::zeros(skeleton.n_joints(), 3);
    for (k, &j) in out_joints.iter().enumerate() {
        pose.row_mut(j).copy_from_slice(&flat[3 * k..3 * k + 3]);
    }
    Ok(pose)
}

/// Builds raw pairs for every sample of `ds`.
pub fn prepare_pairs(ds: &Dataset, frame: TargetFrame) -> Result<Pairs> {
    let sk = &ds.skeleton;
    let n = ds.len();
    let in_w = 2 * sk.n_input_joints();
    let out_w = 3 * sk.output_joints().len();
    let mut x = Vec::with_capacity(n * in_w);
    let mut y = Vec::with_capacity(n * out_w);
    for s in &ds.samples {
        let cam = ds
            .camera(&s.camera_id)
            .ok_or_else(|| Error::Schema(format!("unknown camera ids: {}", s.camera_id)))?;
        x.extend(sample_input(sk, s, cam)?);
        y.extend(drop_root(sk, &sample_pose(sk, s, cam, frame)?));
    }
    Ok(Pairs {
        x2d: Matrix::new(n, in_w, x)?,
        y3d: Matrix::new(n, out_w, y)?,
        actions: ds.samples.iter().map(|s| s.action.clone()).collect(),
        subjects: ds.samples.iter().map(|s| s.subject.clone()).collect(),
    })
}
