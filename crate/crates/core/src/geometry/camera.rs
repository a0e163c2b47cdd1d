use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const CAMERA_SCHEMA: &str = "liftpose-cameras";
pub const CAMERA_SCHEMA_VERSION: u32 = 1;

/// Pinhole camera without lens distortion.
///
/// `rotation` maps world axes to camera axes (row-major 3x3) and
/// `translation` is the camera centre in world millimetres, so a world point
/// `p` lands at `R·(p − t)` in the camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub id: String,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    /// `(fx, fy)` in pixels.
    pub focal: [f64; 2],
    /// `(cx, cy)` in pixels.
    pub center: [f64; 2],
}

impl Camera {
    pub fn new(
        id: impl Into<String>,
        rotation: [f64; 9],
        translation: [f64; 3],
        focal: [f64; 2],
        center: [f64; 2],
    ) -> Result<Self> {
        let cam = Self {
            id: id.into(),
            rotation,
            translation,
            focal,
            center,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `position` whose optical axis passes through `target`, with
    /// image `y` pointing along `−up`.
    pub fn look_at(
        id: impl Into<String>,
        position: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        focal: [f64; 2],
        center: [f64; 2],
    ) -> Result<Self> {
        let z = normalize3(sub3(target, position))
            .ok_or_else(|| Error::Argument("camera position equals its target".into()))?;
        let x = normalize3(cross3(z, up))
            .ok_or_else(|| Error::Argument("camera up vector is parallel to its view axis".into()))?;
        let y = cross3(z, x);
        let rotation = [x[0], x[1], x[2], y[0], y[1], y[2], z[0], z[1], z[2]];
        Self::new(id, rotation, position, focal, center)
    }

    pub fn rotation_matrix(&self) -> Matrix {
        Matrix::new(3, 3, self.rotation.to_vec()).expect("3x3")
    }

    /// Checks `RᵀR = I` and `det R = +1` within 1e-9 and positive focal lengths.
    pub fn validate(&self) -> Result<()> {
        let all_finite = self
            .rotation
            .iter()
            .chain(&self.translation)
            .chain(&self.focal)
            .chain(&self.center)
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Argument(format!("camera {} has non-finite parameters", self.id)));
        }
        let r = self.rotation_matrix();
        let err = r
            .t_matmul(&r)?
            .sub(&Matrix::identity(3))?
            .data()
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        if err > 1e-9 {
            return Err(Error::Argument(format!(
                "camera {} rotation is not orthonormal (max |RᵀR − I| = {err:e})",
                self.id
            )));
        }
        let det = r.det3();
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "camera {} rotation has determinant {det}, expected +1",
                self.id
            )));
        }
        if !(self.focal[0] > 0.0 && self.focal[1] > 0.0) {
            return Err(Error::Argument(format!(
                "camera {} focal lengths must be positive",
                self.id
            )));
        }
        Ok(())
    }
}

fn check_points3(p: &Matrix, what: &str) -> Result<()> {
    if p.cols() != 3 {
        return Err(Error::Shape(format!(
            "{what} expects n x 3 points, got {:?}",
            p.shape()
        )));
    }
    Ok(())
}

/// `P_cam = (P − t)·Rᵀ`, row per joint.
pub fn world_to_camera(p: &Matrix, cam: &Camera) -> Result<Matrix> {
    cam.validate()?;
    check_points3(p, "world_to_camera")?;
    let r = &cam.rotation;
    let t = &cam.translation;
    Ok(Matrix::from_fn(p.rows(), 3, |i, k| {
        let d = [p[(i, 0)] - t[0], p[(i, 1)] - t[1], p[(i, 2)] - t[2]];
        r[3 * k] * d[0] + r[3 * k + 1] * d[1] + r[3 * k + 2] * d[2]
    }))
}

/// Inverse of [`world_to_camera`]: `P = P_cam·R + t`.
pub fn camera_to_world(p_cam: &Matrix, cam: &Camera) -> Result<Matrix> {
    cam.validate()?;
    check_points3(p_cam, "camera_to_world")?;
    let r = &cam.rotation;
    let t = &cam.translation;
    Ok(Matrix::from_fn(p_cam.rows(), 3, |i, k| {
        p_cam[(i, 0)] * r[k] + p_cam[(i, 1)] * r[3 + k] + p_cam[(i, 2)] * r[6 + k] + t[k]
    }))
}

/// Pinhole projection of camera-frame points to pixels.
pub fn project(p_cam: &Matrix, cam: &Camera) -> Result<Matrix> {
    check_points3(p_cam, "project")?;
    for i in 0..p_cam.rows() {
        let z = p_cam[(i, 2)];
        if !(z > 0.0) {
            return Err(Error::Argument(format!(
                "joint {i} is behind camera {} (z = {z})",
                cam.id
            )));
        }
    }
    let [fx, fy] = cam.focal;
    let [cx, cy] = cam.center;
    Ok(Matrix::from_fn(p_cam.rows(), 2, |i, k| {
        let z = p_cam[(i, 2)];
        if k == 0 {
            fx * p_cam[(i, 0)] / z + cx
        } else {
            fy * p_cam[(i, 1)] / z + cy
        }
    }))
}

#[derive(Serialize, Deserialize)]
struct CameraFile {
    schema: String,
    version: u32,
    #[serde(default)]
    cameras: Vec<Camera>,
}

pub fn save_cameras(path: &Path, cameras: &[Camera]) -> Result<()> {
    let file = CameraFile {
        schema: CAMERA_SCHEMA.into(),
        version: CAMERA_SCHEMA_VERSION,
        cameras: cameras.to_vec(),
    };
    let text = toml::to_string(&file).map_err(|e| Error::Schema(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_cameras(path: &Path) -> Result<Vec<Camera>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CameraFile = toml::from_str(&text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0);
        Error::parse(path, line, e.message().to_string())
    })?;
    if file.schema != CAMERA_SCHEMA {
        return Err(Error::Schema(format!(
            "{} is not a camera file (schema {:?})",
            path.display(),
            file.schema
        )));
    }
    if file.version > CAMERA_SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "camera file version {} is newer than supported version {CAMERA_SCHEMA_VERSION}",
            file.version
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for c in &file.cameras {
        c.validate()?;
        if !seen.insert(c.id.clone()) {
            return Err(Error::Schema(format!("duplicate camera id {:?}", c.id)));
        }
    }
    Ok(file.cameras)
}

pub(crate) fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn normalize3(a: [f64; 3]) -> Option<[f64; 3]> {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    (n > 1e-12).then(|| [a[0] / n, a[1] / n, a[2] / n])
}

#[cfg(test)]
mod tests {
    use super::*;

    const IDENTITY: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

    fn test_camera() -> Camera {
        Camera::look_at(
            "c",
            [4000.0, -1500.0, 1600.0],
            [0.0, 0.0, 900.0],
            [0.0, 0.0, 1.0],
            [1145.0, 1144.0],
            [512.0, 515.0],
        )
        .unwrap()
    }

    fn pose() -> Matrix {
        Matrix::from_rows(&[
            [0.0, 0.0, 900.0],
            [120.0, 30.0, 880.0],
            [-140.0, 10.0, 450.0],
            [20.0, 200.0, 1500.0],
        ])
        .unwrap()
    }

    fn dists(p: &Matrix) -> Vec<f64> {
        let mut d = Vec::new();
        for i in 0..p.rows() {
            for j in (i + 1)..p.rows() {
                let s: f64 = (0..3).map(|k| (p[(i, k)] - p[(j, k)]).powi(2)).sum();
                d.push(s.sqrt());
            }
        }
        d
    }

    #[test]
    fn camera_centre_maps_to_origin() {
        let cam = test_camera();
        let p = Matrix::from_rows(&[cam.translation]).unwrap();
        let q = world_to_camera(&p, &cam).unwrap();
        assert!(q.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rigid_transform_preserves_distances() {
        let cam = test_camera();
        let p = pose();
        let q = world_to_camera(&p, &cam).unwrap();
        for (a, b) in dists(&p).iter().zip(dists(&q)) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn identity_camera_is_identity_map() {
        let cam = Camera::new("i", IDENTITY, [0.0; 3], [1.0, 1.0], [0.0, 0.0]).unwrap();
        assert_eq!(world_to_camera(&pose(), &cam).unwrap(), pose());
    }

    #[test]
    fn inverse_recovers_input() {
        let cam = test_camera();
        let back = camera_to_world(&world_to_camera(&pose(), &cam).unwrap(), &cam).unwrap();
        assert!(back.max_abs_diff(&pose()) <= 1e-9);
    }

    #[test]
    fn invalid_rotation_rejected() {
        let mut cam = test_camera();
        cam.rotation[0] *= 1.01;
        assert!(matches!(world_to_camera(&pose(), &cam), Err(Error::Argument(_))));
        // reflection
        let refl = [-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert!(Camera::new("r", refl, [0.0; 3], [1.0, 1.0], [0.0; 2]).is_err());
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = Camera::new("i", IDENTITY, [0.0; 3], [1000.0, 900.0], [500.0, 400.0]).unwrap();
        let p = Matrix::from_rows(&[[0.0, 0.0, 2500.0]]).unwrap();
        assert_eq!(project(&p, &cam).unwrap().data(), &[500.0, 400.0]);
    }

    #[test]
    fn projection_by_hand() {
        let cam = Camera::new("i", IDENTITY, [0.0; 3], [1000.0, 1000.0], [500.0, 500.0]).unwrap();
        let p = Matrix::from_rows(&[[100.0, 0.0, 1000.0]]).unwrap();
        let uv = project(&p, &cam).unwrap();
        assert_eq!(uv[(0, 0)], 600.0);
        assert_eq!(uv[(0, 1)], 500.0);
    }

    #[test]
    fn doubling_depth_halves_offset() {
        let cam = Camera::new("i", IDENTITY, [0.0; 3], [1000.0, 1100.0], [500.0, 400.0]).unwrap();
        let near = project(&Matrix::from_rows(&[[120.0, -80.0, 1500.0]]).unwrap(), &cam).unwrap();
        let far = project(&Matrix::from_rows(&[[120.0, -80.0, 3000.0]]).unwrap(), &cam).unwrap();
        assert!(((far[(0, 0)] - 500.0) * 2.0 - (near[(0, 0)] - 500.0)).abs() < 1e-12);
        assert!(((far[(0, 1)] - 400.0) * 2.0 - (near[(0, 1)] - 400.0)).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_rejected() {
        let cam = Camera::new("i", IDENTITY, [0.0; 3], [1.0, 1.0], [0.0; 2]).unwrap();
        let p = Matrix::from_rows(&[[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]).unwrap();
        assert!(project(&p, &cam).is_err());
    }

    #[test]
    fn camera_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cams.toml");
        let cams = vec![
            test_camera(),
            Camera::new("b", IDENTITY, [1.0, 2.0, 3.0], [1.0, 2.0], [3.0, 4.0]).unwrap(),
        ];
        save_cameras(&path, &cams).unwrap();
        assert_eq!(load_cameras(&path).unwrap(), cams);
    }

    #[test]
    fn newer_camera_schema_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cams.toml");
        std::fs::write(&path, "schema = \"liftpose-cameras\"\nversion = 99\n").unwrap();
        assert!(matches!(load_cameras(&path), Err(Error::Schema(_))));
    }
}
