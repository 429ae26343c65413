//! Numerical linear algebra plumbing: thin SVD, eigenvalue queries, and
//! least-squares solves.
//!
//! The decompositions themselves are delegated to `nalgebra`; this module owns
//! the conventions layered on top (descending singular values, deterministic
//! sign choice, the rank-detection threshold).

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Singular values below `RANK_TOL * s_max` do not count toward the rank.
pub const RANK_TOL: f64 = 1e-8;

const SVD_EPS: f64 = f64::EPSILON;
const SVD_MAX_ITER: usize = 0; // 0 = run until nalgebra's convergence criterion

/// Thin SVD `m = u * diag(s) * v^T` with `s` nonincreasing and the
/// largest-magnitude entry of every left singular vector positive.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

fn to_nalgebra(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_iterator(m.rows(), m.cols(), m.data().iter().copied())
}

fn from_nalgebra(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn thin_svd(m: &Matrix) -> Result<ThinSvd> {
    if !m.is_finite() {
        return Err(Error::NonFinite("SVD input contains NaN or infinity".into()));
    }
    let svd = to_nalgebra(m)
        .try_svd(true, true, SVD_EPS, SVD_MAX_ITER)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u_na = svd.u.expect("u requested");
    let vt_na = svd.v_t.expect("v_t requested");
    let k = svd.singular_values.len();

    // nalgebra returns the values sorted, but the contract here is explicit:
    // order descending, then fix signs.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .expect("singular values are finite")
    });

    let mut u = Matrix::zeros(m.rows(), k);
    let mut v = Matrix::zeros(m.cols(), k);
    let mut s = Vec::with_capacity(k);
    for (col, &src) in order.iter().enumerate() {
        s.push(svd.singular_values[src]);
        let mut flip = 1.0;
        let mut best = 0.0f64;
        for i in 0..m.rows() {
            let x = u_na[(i, src)];
            if x.abs() > best {
                best = x.abs();
                flip = if x < 0.0 { -1.0 } else { 1.0 };
            }
        }
        for i in 0..m.rows() {
            u.set(i, col, flip * u_na[(i, src)]);
        }
        for j in 0..m.cols() {
            v.set(j, col, flip * vt_na[(src, j)]);
        }
    }
    Ok(ThinSvd { u, s, v })
}

pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    thin_svd(m).map(|svd| svd.s)
}

/// Number of singular values above `RANK_TOL` times the largest.
pub fn detected_rank(s: &[f64]) -> usize {
    match s.first() {
        None => 0,
        Some(&s0) if s0 <= 0.0 => 0,
        Some(&s0) => s.iter().filter(|&&x| x > RANK_TOL * s0).count(),
    }
}

/// Largest eigenvalue modulus of a square real matrix.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    if m.rows() != m.cols() {
        return Err(Error::ShapeMismatch(format!(
            "spectral radius needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let eig = to_nalgebra(m).complex_eigenvalues();
    Ok(eig.iter().fold(0.0f64, |acc, l| acc.max(l.norm())))
}

/// Extreme singular values (min, max) of a complex matrix given as
/// real and imaginary parts.
pub fn complex_singular_extremes(re: &Matrix, im: &Matrix) -> Result<(f64, f64)> {
    if re.shape() != im.shape() {
        return Err(Error::ShapeMismatch(
            "real and imaginary parts must have equal shapes".into(),
        ));
    }
    let m = DMatrix::from_fn(re.rows(), re.cols(), |i, j| {
        Complex::new(re.get(i, j), im.get(i, j))
    });
    let sv = m.singular_values();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for &s in sv.iter() {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    Ok((lo, hi))
}

/// Extreme eigenvalues (min, max) of a symmetric real matrix.
pub fn symmetric_eigen_extremes(m: &Matrix) -> Result<(f64, f64)> {
    if m.rows() != m.cols() {
        return Err(Error::ShapeMismatch("symmetric eigen needs a square matrix".into()));
    }
    let eig = to_nalgebra(m).symmetric_eigenvalues();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in eig.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    Ok((lo, hi))
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky_factor(m: &Matrix) -> Result<Matrix> {
    if m.rows() != m.cols() {
        return Err(Error::ShapeMismatch("cholesky needs a square matrix".into()));
    }
    let chol = nalgebra::Cholesky::new(to_nalgebra(m))
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))?;
    Ok(from_nalgebra(&chol.l()))
}

/// Solution of the least-squares problem `min_W ||Y - W X||_F`.
pub struct LeastSquares {
    pub w: Matrix,
    /// Rank of the design matrix under [`RANK_TOL`].
    pub rank: usize,
    /// True when the minimizer is not unique (rank-deficient design); the
    /// returned `w` is then the minimum-norm solution.
    pub non_unique: bool,
}

/// Minimum-norm least squares for `Y ~ W X` with `X` of shape d x T and
/// `Y` of shape n x T; returns `W` of shape n x d.
pub fn min_norm_least_squares(x: &Matrix, y: &Matrix) -> Result<LeastSquares> {
    if x.cols() != y.cols() {
        return Err(Error::ShapeMismatch(format!(
            "design has {} columns but targets have {}",
            x.cols(),
            y.cols()
        )));
    }
    let svd = thin_svd(x)?;
    let rank = detected_rank(&svd.s);
    let n = y.rows();
    let d = x.rows();

    // W = Y V_r S_r^{-1} U_r^T, using only the numerically nonzero part.
    let mut w = Matrix::zeros(n, d);
    if rank > 0 {
        let yv = y.matmul(&svd.v.leading_columns(rank)); // n x r
        let mut scaled = yv;
        for i in 0..n {
            for j in 0..rank {
                let v = scaled.get(i, j) / svd.s[j];
                scaled.set(i, j, v);
            }
        }
        w = scaled.matmul_transpose(&svd.u.leading_columns(rank));
    }
    Ok(LeastSquares {
        w,
        rank,
        non_unique: rank < d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn svd_diagonal_values() {
        let m = Matrix::from_vec(2, 2, vec![3.0, 0.0, 0.0, 1.0]);
        let svd = thin_svd(&m).unwrap();
        assert!((svd.s[0] - 3.0).abs() < 1e-12);
        assert!((svd.s[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn svd_rank_one_outer_product() {
        let u = [1.0, -2.0, 0.5];
        let v = [0.3, 0.7];
        let m = Matrix::from_fn(3, 2, |i, j| u[i] * v[j]);
        let svd = thin_svd(&m).unwrap();
        assert_eq!(detected_rank(&svd.s), 1);
    }

    #[test]
    fn svd_orthogonality_and_reconstruction() {
        let mut r = rng::rng_from_seed(11);
        let m = rng::standard_normal_matrix(&mut r, 5, 3);
        let svd = thin_svd(&m).unwrap();
        let utu = svd.u.transpose_matmul(&svd.u);
        let vtv = svd.v.transpose_matmul(&svd.v);
        let eye = Matrix::identity(3);
        assert!(utu.sub(&eye).max_abs() < 1e-10);
        assert!(vtv.sub(&eye).max_abs() < 1e-10);

        let mut us = svd.u.clone();
        for i in 0..us.rows() {
            for j in 0..us.cols() {
                us.set(i, j, us.get(i, j) * svd.s[j]);
            }
        }
        let rec = us.matmul_transpose(&svd.v);
        assert!(rec.sub(&m).frobenius_norm() / m.frobenius_norm() < 1e-10);
    }

    #[test]
    fn svd_sign_convention_is_deterministic() {
        let mut r = rng::rng_from_seed(3);
        let m = rng::standard_normal_matrix(&mut r, 4, 4);
        let a = thin_svd(&m).unwrap();
        let b = thin_svd(&m).unwrap();
        assert_eq!(a.u, b.u);
        assert_eq!(a.v, b.v);
        for col in 0..a.u.cols() {
            let column = a.u.col(col);
            let max = column.iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
            let entry = column.iter().cloned().find(|v| v.abs() == max).unwrap();
            assert!(entry > 0.0, "largest-magnitude entry must be positive");
        }
    }

    #[test]
    fn svd_rejects_non_finite() {
        let m = Matrix::from_vec(1, 2, vec![1.0, f64::INFINITY]);
        assert!(thin_svd(&m).is_err());
    }

    #[test]
    fn spectral_radius_rotation() {
        let m = Matrix::from_vec(2, 2, vec![0.0, -0.8, 0.8, 0.0]);
        let r = spectral_radius(&m).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
    }

    #[test]
    fn min_norm_solution_flags_deficiency() {
        // One observation, two features: infinitely many exact solutions.
        let x = Matrix::from_vec(2, 1, vec![1.0, 1.0]);
        let y = Matrix::from_vec(1, 1, vec![2.0]);
        let ls = min_norm_least_squares(&x, &y).unwrap();
        assert!(ls.non_unique);
        // Minimum-norm picks (1, 1).
        assert!((ls.w.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((ls.w.get(0, 1) - 1.0).abs() < 1e-12);
    }
}
