use crate::error::{Error, Result};
use crate::numerics::{svd, KahanSum, Matrix};

fn check_pair(pred: &Matrix, gt: &Matrix) -> Result<()> {
    if pred.shape() != gt.shape() || pred.cols() != 3 {
        return Err(Error::Shape(format!(
            "pose shapes {:?} and {:?} differ or are not n x 3",
            pred.shape(),
            gt.shape()
        )));
    }
    if pred.rows() == 0 {
        return Err(Error::Shape("poses have no joints".into()));
    }
    Ok(())
}

fn joint_dist(pred: &Matrix, gt: &Matrix, j: usize) -> f64 {
    let d: [f64; 3] = std::array::from_fn(|k| pred[(j, k)] - gt[(j, k)]);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Mean Euclidean joint distance over all rows.
pub fn mpjpe(pred: &Matrix, gt: &Matrix) -> Result<f64> {
    check_pair(pred, gt)?;
    let s: KahanSum = (0..pred.rows()).map(|j| joint_dist(pred, gt, j)).collect();
    Ok(s.total() / pred.rows() as f64)
}

/// Mean Euclidean joint distance over the listed joints only.
pub fn mpjpe_over(pred: &Matrix, gt: &Matrix, joints: &[usize]) -> Result<f64> {
    mpjpe(&pred.select_rows(joints), &gt.select_rows(joints))
}

/// Sum of squared joint residuals.
pub fn sse(pred: &Matrix, gt: &Matrix) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(pred.sub(gt)?.data().iter().map(|v| v * v).collect::<KahanSum>().total())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AlignOptions {
    /// Also fit a uniform scale (similarity transform). Off by default.
    pub with_scale: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// Proper rotation, `det = +1`.
    pub rotation: Matrix,
    pub translation: [f64; 3],
    pub scale: f64,
    /// `scale · R · pred_i + t` for every joint.
    pub aligned: Matrix,
}

/// Least-squares rigid fit of `pred` onto `gt`.
pub fn procrustes_align(pred: &Matrix, gt: &Matrix) -> Result<Alignment> {
    procrustes_align_with(pred, gt, AlignOptions::default())
}

/// Kabsch/Umeyama: SVD of the centred cross-covariance with the sign of the
/// last singular direction flipped when needed to avoid a reflection.
pub fn procrustes_align_with(pred: &Matrix, gt: &Matrix, opts: AlignOptions) -> Result<Alignment> {
    check_pair(pred, gt)?;
    let n = pred.rows();
    let centroid = |m: &Matrix| -> [f64; 3] {
        std::array::from_fn(|k| (0..n).map(|j| m[(j, k)]).collect::<KahanSum>().total() / n as f64)
    };
    let mp = centroid(pred);
    let mg = centroid(gt);
    let p0 = Matrix::from_fn(n, 3, |j, k| pred[(j, k)] - mp[k]);
    let g0 = Matrix::from_fn(n, 3, |j, k| gt[(j, k)] - mg[k]);
    for (m, what) in [(&p0, "predicted"), (&g0, "target")] {
        if n < 3 {
            return Err(Error::Numeric(format!("alignment needs 3 joints, got {n}")));
        }
        let s = svd(m)?.s;
        if !(s[1] > 1e-9 * s[0].max(1e-300)) {
            return Err(Error::Numeric(format!(
                "{what} pose is degenerate (collinear joints); rigid alignment is undefined"
            )));
        }
    }
    // H = P0ᵀ G0 = U S Vᵀ, R = V D Uᵀ
    let h = p0.t_matmul(&g0)?;
    let dec = svd(&h)?;
    let v = dec.vt.transpose();
    let mut d = [1.0, 1.0, 1.0];
    if v.matmul_t(&dec.u)?.det3() < 0.0 {
        d[2] = -1.0;
    }
    let vd = Matrix::from_fn(3, 3, |r, c| v[(r, c)] * d[c]);
    let rotation = vd.matmul_t(&dec.u)?;
    let scale = if opts.with_scale {
        let num: f64 = (0..3).map(|k| dec.s[k] * d[k]).sum();
        let den = p0.data().iter().map(|x| x * x).collect::<KahanSum>().total();
        num / den
    } else {
        1.0
    };
    let rp = rotation.matmul(&Matrix::row_vector(&mp).transpose())?;
    let translation: [f64; 3] = std::array::from_fn(|k| mg[k] - scale * rp[(k, 0)]);
    let rotated = pred.matmul_t(&rotation)?;
    let aligned = Matrix::from_fn(n, 3, |j, k| scale * rotated[(j, k)] + translation[k]);
    Ok(Alignment {
        rotation,
        translation,
        scale,
        aligned,
    })
}
