//! Third-order tensor algebra: unfoldings, mode products, Kronecker products,
//! Tucker reconstruction and HOSVD.
//!
//! Conventions, fixed once for the whole crate:
//! - Storage is first-index-fastest: entry `(i1, i2, i3)` of a `(p1, p2, p3)`
//!   tensor lives at `i1 + p1 * (i2 + p2 * i3)`.
//! - `vec` of a matrix is column-major (first index fastest), so
//!   `(B (x) A) vec(X) = vec(A X B^T)`.
//! - Unfolding along mode `n` keeps mode `n` as rows and orders the remaining
//!   indices with the lower-numbered mode varying fastest. A tensor built by
//!   stacking slices `A_1..A_P` therefore unfolds along mode 1 to the
//!   horizontal concatenation `(A_1, ..., A_P)`.

use crate::error::{Error, Result};
use crate::linalg::{self, ThinSvd};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let (p1, p2, p3) = dims;
        if p1 == 0 || p2 == 0 || p3 == 0 {
            return Err(Error::InvalidArgument(format!(
                "tensor dimensions must be positive, got {dims:?}"
            )));
        }
        if data.len() != p1 * p2 * p3 {
            return Err(Error::ShapeMismatch(format!(
                "tensor {dims:?} needs {} values, got {}",
                p1 * p2 * p3,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor entries must be finite".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn from_vec(dims: (usize, usize, usize), data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dims.0 * dims.1 * dims.2, "tensor data length mismatch");
        Self { dims, data }
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn index(&self, i1: usize, i2: usize, i3: usize) -> usize {
        debug_assert!(i1 < self.dims.0 && i2 < self.dims.1 && i3 < self.dims.2);
        i1 + self.dims.0 * (i2 + self.dims.1 * i3)
    }

    #[inline]
    pub fn get(&self, i1: usize, i2: usize, i3: usize) -> f64 {
        self.data[self.index(i1, i2, i3)]
    }

    #[inline]
    pub fn set(&mut self, i1: usize, i2: usize, i3: usize, v: f64) {
        let idx = self.index(i1, i2, i3);
        self.data[idx] = v;
    }

    /// Frontal slice `t(:, :, k)` as a matrix.
    pub fn slice(&self, k: usize) -> Matrix {
        Matrix::from_fn(self.dims.0, self.dims.1, |i, j| self.get(i, j, k))
    }

    /// Builds a tensor by stacking `slices[k]` as `t(:, :, k)`.
    pub fn from_slices(slices: &[Matrix]) -> Result<Self> {
        let p3 = slices.len();
        if p3 == 0 {
            return Err(Error::InvalidArgument("need at least one slice".into()));
        }
        let (p1, p2) = slices[0].shape();
        let mut t = Tensor3::zeros((p1, p2, p3));
        for (k, s) in slices.iter().enumerate() {
            if s.shape() != (p1, p2) {
                return Err(Error::ShapeMismatch("slices must share a shape".into()));
            }
            for i in 0..p1 {
                for j in 0..p2 {
                    t.set(i, j, k, s.get(i, j));
                }
            }
        }
        Ok(t)
    }

    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(format!(
                "tensor dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor3::from_vec(self.dims, data))
    }

    pub fn scale(&self, s: f64) -> Tensor3 {
        Tensor3::from_vec(self.dims, self.data.iter().map(|v| v * s).collect())
    }
}

fn mode_dim(dims: (usize, usize, usize), mode: u8) -> usize {
    match mode {
        1 => dims.0,
        2 => dims.1,
        3 => dims.2,
        _ => unreachable!(),
    }
}

fn check_mode(mode: u8) -> Result<()> {
    if !(1..=3).contains(&mode) {
        return Err(Error::InvalidArgument(format!("mode must be 1, 2 or 3, got {mode}")));
    }
    Ok(())
}

/// Mode-`n` unfolding (matricization).
pub fn unfold(t: &Tensor3, mode: u8) -> Result<Matrix> {
    check_mode(mode)?;
    let (p1, p2, p3) = t.dims();
    let (rows, cols) = match mode {
        1 => (p1, p2 * p3),
        2 => (p2, p1 * p3),
        3 => (p3, p1 * p2),
        _ => unreachable!(),
    };
    let mut m = Matrix::zeros(rows, cols);
    for i3 in 0..p3 {
        for i2 in 0..p2 {
            for i1 in 0..p1 {
                let v = t.get(i1, i2, i3);
                match mode {
                    1 => m.set(i1, i2 + p2 * i3, v),
                    2 => m.set(i2, i1 + p1 * i3, v),
                    3 => m.set(i3, i1 + p1 * i2, v),
                    _ => unreachable!(),
                }
            }
        }
    }
    Ok(m)
}

/// Inverse of [`unfold`]: refolds a matricization into a tensor of `dims`.
pub fn fold(m: &Matrix, mode: u8, dims: (usize, usize, usize)) -> Result<Tensor3> {
    check_mode(mode)?;
    let (p1, p2, p3) = dims;
    let total = p1 * p2 * p3;
    let rows = mode_dim(dims, mode);
    if rows == 0 || m.rows() != rows || m.cols() * rows != total {
        return Err(Error::ShapeMismatch(format!(
            "cannot fold a {}x{} matrix along mode {mode} into {dims:?}",
            m.rows(),
            m.cols()
        )));
    }
    let mut t = Tensor3::zeros(dims);
    for i3 in 0..p3 {
        for i2 in 0..p2 {
            for i1 in 0..p1 {
                let v = match mode {
                    1 => m.get(i1, i2 + p2 * i3),
                    2 => m.get(i2, i1 + p1 * i3),
                    3 => m.get(i3, i1 + p1 * i2),
                    _ => unreachable!(),
                };
                t.set(i1, i2, i3, v);
            }
        }
    }
    Ok(t)
}

/// Mode-`n` product `t x_n m`, computed from the definition sum
/// `(t x_n m)(.., j, ..) = sum_i t(.., i, ..) m(j, i)`.
pub fn mode_multiply(t: &Tensor3, m: &Matrix, mode: u8) -> Result<Tensor3> {
    check_mode(mode)?;
    let (p1, p2, p3) = t.dims();
    let pn = mode_dim(t.dims(), mode);
    if m.cols() != pn {
        return Err(Error::ShapeMismatch(format!(
            "mode-{mode} product needs {pn} columns, matrix has {}",
            m.cols()
        )));
    }
    let q = m.rows();
    let new_dims = match mode {
        1 => (q, p2, p3),
        2 => (p1, q, p3),
        3 => (p1, p2, q),
        _ => unreachable!(),
    };
    let mut out = Tensor3::zeros(new_dims);
    match mode {
        1 => {
            for i3 in 0..p3 {
                for i2 in 0..p2 {
                    for j in 0..q {
                        let mut acc = 0.0;
                        for i1 in 0..p1 {
                            acc += t.get(i1, i2, i3) * m.get(j, i1);
                        }
                        out.set(j, i2, i3, acc);
                    }
                }
            }
        }
        2 => {
            for i3 in 0..p3 {
                for j in 0..q {
                    for i1 in 0..p1 {
                        let mut acc = 0.0;
                        for i2 in 0..p2 {
                            acc += t.get(i1, i2, i3) * m.get(j, i2);
                        }
                        out.set(i1, j, i3, acc);
                    }
                }
            }
        }
        3 => {
            for j in 0..q {
                for i2 in 0..p2 {
                    for i1 in 0..p1 {
                        let mut acc = 0.0;
                        for i3 in 0..p3 {
                            acc += t.get(i1, i2, i3) * m.get(j, i3);
                        }
                        out.set(i1, i2, j, acc);
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(out)
}

/// Kronecker product `a (x) b`.
pub fn kronecker(a: &Matrix, b: &Matrix) -> Matrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = Matrix::zeros(ra * rb, ca * cb);
    for ia in 0..ra {
        for ja in 0..ca {
            let s = a.get(ia, ja);
            if s == 0.0 {
                continue;
            }
            for ib in 0..rb {
                for jb in 0..cb {
                    out.set(ia * rb + ib, ja * cb + jb, s * b.get(ib, jb));
                }
            }
        }
    }
    out
}

/// Core tensor plus one factor matrix per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerFactors {
    pub core: Tensor3,
    pub u1: Matrix,
    pub u2: Matrix,
    pub u3: Matrix,
}

impl TuckerFactors {
    pub fn new(core: Tensor3, u1: Matrix, u2: Matrix, u3: Matrix) -> Result<Self> {
        let (r1, r2, r3) = core.dims();
        for (name, u, r) in [("u1", &u1, r1), ("u2", &u2, r2), ("u3", &u3, r3)] {
            if u.cols() != r {
                return Err(Error::ShapeMismatch(format!(
                    "{name} has {} columns but the core expects {r}",
                    u.cols()
                )));
            }
            if u.rows() < r {
                return Err(Error::InvalidArgument(format!(
                    "{name} is {}x{}: rank exceeds dimension",
                    u.rows(),
                    u.cols()
                )));
            }
        }
        Ok(Self { core, u1, u2, u3 })
    }

    pub fn ranks(&self) -> (usize, usize, usize) {
        self.core.dims()
    }

    pub fn outer_dims(&self) -> (usize, usize, usize) {
        (self.u1.rows(), self.u2.rows(), self.u3.rows())
    }
}

/// `core x_1 u1 x_2 u2 x_3 u3`.
pub fn tucker_reconstruct(f: &TuckerFactors) -> Result<Tensor3> {
    let t = mode_multiply(&f.core, &f.u1, 1)?;
    let t = mode_multiply(&t, &f.u2, 2)?;
    mode_multiply(&t, &f.u3, 3)
}

/// Mode-1 unfolding of the reconstruction, `u1 g_(1) (u3 (x) u2)^T`, computed
/// without materializing the full tensor.
pub fn tucker_unfold1(f: &TuckerFactors) -> Result<Matrix> {
    let g1 = unfold(&f.core, 1)?;
    let k = kronecker(&f.u3, &f.u2);
    Ok(f.u1.matmul(&g1).matmul_transpose(&k))
}

/// Higher-order SVD at the requested Tucker ranks.
pub fn hosvd(t: &Tensor3, ranks: (usize, usize, usize)) -> Result<TuckerFactors> {
    let dims = t.dims();
    for (mode, (r, p)) in [
        (1, (ranks.0, dims.0)),
        (2, (ranks.1, dims.1)),
        (3, (ranks.2, dims.2)),
    ] {
        if r == 0 || r > p {
            return Err(Error::InvalidArgument(format!(
                "mode-{mode} rank {r} is outside 1..={p}"
            )));
        }
    }
    let leading = |mode: u8, r: usize| -> Result<Matrix> {
        let svd: ThinSvd = linalg::thin_svd(&unfold(t, mode)?)?;
        Ok(svd.u.leading_columns(r))
    };
    let u1 = leading(1, ranks.0)?;
    let u2 = leading(2, ranks.1)?;
    let u3 = leading(3, ranks.2)?;
    let core = mode_multiply(t, &u1.transpose(), 1)?;
    let core = mode_multiply(&core, &u2.transpose(), 2)?;
    let core = mode_multiply(&core, &u3.transpose(), 3)?;
    TuckerFactors::new(core, u1, u2, u3)
}

/// Tucker ranks detected from the three unfoldings.
pub fn detected_tucker_ranks(t: &Tensor3) -> Result<(usize, usize, usize)> {
    let r = |mode| -> Result<usize> {
        Ok(linalg::detected_rank(&linalg::singular_values(&unfold(t, mode)?)?))
    };
    Ok((r(1)?, r(2)?, r(3)?))
}

pub fn frobenius_norm(t: &Tensor3) -> f64 {
    t.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn inner_product(a: &Tensor3, b: &Tensor3) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "inner product dims {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum())
}
