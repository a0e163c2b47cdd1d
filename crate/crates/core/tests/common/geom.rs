use liftpose::{Matrix, Rng};

/// Uniformly random rotation from a normalized Gaussian quaternion.
pub fn random_rotation(rng: &mut Rng) -> Matrix {
    let mut q = [0.0; 4];
    loop {
        q.iter_mut().for_each(|v| *v = rng.standard_normal());
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.iter_mut().for_each(|v| *v /= n);
            break;
        }
    }
    let [w, x, y, z] = q;
    Matrix::from_rows(&[
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ])
    .unwrap()
}

/// `R · p_i + t` for every row.
pub fn rigid(p: &Matrix, r: &Matrix, t: [f64; 3]) -> Matrix {
    let mut out = p.matmul_t(r).unwrap();
    for i in 0..out.rows() {
        for c in 0..3 {
            out[(i, c)] += t[c];
        }
    }
    out
}

pub fn random_pose(rng: &mut Rng, n: usize) -> Matrix {
    rng.gauss_matrix(0.0, 300.0, n, 3).unwrap()
}
