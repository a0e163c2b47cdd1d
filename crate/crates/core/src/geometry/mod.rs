//! Camera-frame preprocessing: rigid world-to-camera transform, pinhole
//! projection, root centering, z-score normalization and pixel noise.

mod camera;

pub use camera::{
    camera_to_world, load_cameras, project, save_cameras, world_to_camera, Camera, CAMERA_SCHEMA, CAMERA_SCHEMA_VERSION,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Standard deviations below this are treated as constant coordinates.
pub const STD_FLOOR: f64 = 1e-8;

/// Translates a pose so joint `root_idx` sits at the origin.
pub fn root_center(p: &Matrix, root_idx: usize) -> Result<Matrix> {
    if root_idx >= p.rows() {
        return Err(Error::Argument(format!(
            "root index {root_idx} out of range for {} joints",
            p.rows()
        )));
    }
    let root = p.row(root_idx).to_vec();
    let mut out = Matrix::from_fn(p.rows(), p.cols(), |r, c| p[(r, c)] - root[c]);
    // exact zero even when the subtraction rounds
    out.row_mut(root_idx).fill(0.0);
    Ok(out)
}

/// Adds i.i.d. `N(0, sigma²)` pixel noise to every coordinate.
pub fn add_noise(x: &Matrix, sigma: f64, rng: &mut Rng) -> Result<Matrix> {
    if !(sigma >= 0.0) {
        return Err(Error::Argument(format!("noise sigma {sigma} is negative")));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let noise = rng.gauss_matrix(0.0, sigma, x.rows(), x.cols())?;
    x.add(&noise)
}

/// Per-coordinate mean and standard deviation of network inputs and targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean2d: Vec<f64>,
    pub std2d: Vec<f64>,
    pub mean3d: Vec<f64>,
    pub std3d: Vec<f64>,
}

impl NormStats {
    /// Fits statistics on training inputs (`N x 2n_in`) and targets
    /// (`N x 3n_out`).
    pub fn fit(x2d: &Matrix, y3d: &Matrix) -> Result<Self> {
        if x2d.rows() == 0 || x2d.rows() != y3d.rows() {
            return Err(Error::Argument(format!(
                "cannot fit statistics on {} inputs and {} targets",
                x2d.rows(),
                y3d.rows()
            )));
        }
        let (mean2d, std2d) = column_stats(x2d, "2d input");
        let (mean3d, std3d) = column_stats(y3d, "3d target");
        Ok(Self {
            mean2d,
            std2d,
            mean3d,
            std3d,
        })
    }

    pub fn normalize_inputs(&self, x: &Matrix) -> Result<Matrix> {
        normalize(x, &self.mean2d, &self.std2d)
    }

    pub fn normalize_targets(&self, y: &Matrix) -> Result<Matrix> {
        normalize(y, &self.mean3d, &self.std3d)
    }

    pub fn denormalize_inputs(&self, x: &Matrix) -> Result<Matrix> {
        denormalize(x, &self.mean2d, &self.std2d)
    }

    pub fn denormalize_targets(&self, y: &Matrix) -> Result<Matrix> {
        denormalize(y, &self.mean3d, &self.std3d)
    }
}

/// Shorthand for [`NormStats::fit`].
pub fn fit_stats(x2d: &Matrix, y3d: &Matrix) -> Result<NormStats> {
    NormStats::fit(x2d, y3d)
}

/// Column means and population standard deviations, with the deviation
/// floored at [`STD_FLOOR`].
fn column_stats(m: &Matrix, what: &str) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows() as f64;
    let mut mean = vec![0.0; m.cols()];
    for row in m.row_iter() {
        mean.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    mean.iter_mut().for_each(|a| *a /= n);
    let mut var = vec![0.0; m.cols()];
    for row in m.row_iter() {
        for (j, v) in row.iter().enumerate() {
            var[j] += (v - mean[j]).powi(2);
        }
    }
    let std = var
        .iter()
        .enumerate()
        .map(|(j, v)| {
            let s = (v / n).sqrt();
            if s < STD_FLOOR {
                log::warn!("{what} coordinate {j} is constant; std floored to {STD_FLOOR:e}");
                STD_FLOOR
            } else {
                s
            }
        })
        .collect();
    (mean, std)
}

fn check_width(m: &Matrix, mean: &[f64], std: &[f64]) -> Result<()> {
    if m.cols() != mean.len() || m.cols() != std.len() {
        return Err(Error::Shape(format!(
            "statistics cover {} coordinates, data has {}",
            mean.len(),
            m.cols()
        )));
    }
    Ok(())
}

pub fn normalize(m: &Matrix, mean: &[f64], std: &[f64]) -> Result<Matrix> {
    check_width(m, mean, std)?;
    Ok(Matrix::from_fn(m.rows(), m.cols(), |r, c| {
        (m[(r, c)] - mean[c]) / std[c]
    }))
}

pub fn denormalize(m: &Matrix, mean: &[f64], std: &[f64]) -> Result<Matrix> {
    check_width(m, mean, std)?;
    Ok(Matrix::from_fn(m.rows(), m.cols(), |r, c| m[(r, c)] * std[c] + mean[c]))
}
