//! Matrix factorisations on [`DenseTensor`] matrices, backed by `faer`.
//!
//! All decompositions run with faer's sequential parallelism so results are
//! bit-reproducible regardless of how many worker threads the caller uses.

use std::sync::Once;

use faer::{Mat, MatRef, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Singular values below this fraction of the largest one count as zero
/// when determining rank.
pub const RANK_CUTOFF: f64 = 1e-12;

static SEQUENTIAL: Once = Once::new();

fn init() {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

pub(crate) fn to_mat(m: &DenseTensor) -> Mat<f64> {
    assert_eq!(m.rank(), 2, "expected a matrix, got shape {:?}", m.shape());
    let cols = m.cols();
    let d = m.data();
    Mat::from_fn(m.rows(), cols, |i, j| d[i * cols + j])
}

pub(crate) fn from_mat(m: MatRef<'_, f64>) -> DenseTensor {
    let (r, c) = (m.nrows(), m.ncols());
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            data.push(m[(i, j)]);
        }
    }
    DenseTensor::matrix(r.max(1), c.max(1), data).expect("faer matrix has consistent shape")
}

/// Matrix product of two rank-2 tensors.
pub fn matmul(a: &DenseTensor, b: &DenseTensor) -> DenseTensor {
    assert_eq!(a.cols(), b.rows(), "inner dimensions differ");
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    // small products are faster as plain loops than through faer's dispatch
    if m * k * n <= 4096 {
        let (ad, bd) = (a.data(), b.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let x = ad[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let row = &bd[p * n..(p + 1) * n];
                for (o, y) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                    *o += x * y;
                }
            }
        }
        return DenseTensor::matrix(m, n, out).expect("consistent shape");
    }
    init();
    let prod = to_mat(a) * to_mat(b);
    from_mat(prod.as_ref())
}

/// `aᵀ · b` without materialising the transpose.
pub fn matmul_tn(a: &DenseTensor, b: &DenseTensor) -> DenseTensor {
    init();
    assert_eq!(a.rows(), b.rows(), "row counts differ");
    let prod = to_mat(a).transpose() * to_mat(b);
    from_mat(prod.as_ref())
}

/// Matrix-vector product.
pub fn matvec(a: &DenseTensor, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.cols(), x.len());
    a.data()
        .chunks_exact(a.cols())
        .map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum())
        .collect()
}

/// `aᵀ · x`.
pub fn matvec_t(a: &DenseTensor, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.rows(), x.len());
    let mut out = vec![0.0; a.cols()];
    for (row, &xi) in a.data().chunks_exact(a.cols()).zip(x) {
        if xi == 0.0 {
            continue;
        }
        for (o, r) in out.iter_mut().zip(row) {
            *o += r * xi;
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvdResult {
    /// `m × k`, orthonormal columns.
    pub left: DenseTensor,
    /// Non-increasing, non-negative.
    pub singular_values: Vec<f64>,
    /// `k × n`, orthonormal rows.
    pub right: DenseTensor,
    /// Sum of squared singular values that were dropped.
    pub discarded_weight: f64,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `left · diag(s) · right`.
    pub fn reconstruct(&self) -> DenseTensor {
        matmul(&self.left_scaled(), &self.right)
    }

    /// `left · diag(s)`.
    pub fn left_scaled(&self) -> DenseTensor {
        let mut l = self.left.clone();
        let k = self.rank();
        for row in l.data_mut().chunks_exact_mut(k) {
            for (x, s) in row.iter_mut().zip(&self.singular_values) {
                *x *= s;
            }
        }
        l
    }

    /// `diag(s) · right`.
    pub fn right_scaled(&self) -> DenseTensor {
        let mut r = self.right.clone();
        let n = r.cols();
        for (row, s) in r.data_mut().chunks_exact_mut(n).zip(&self.singular_values) {
            row.iter_mut().for_each(|x| *x *= s);
        }
        r
    }
}

fn thin_svd(matrix: &DenseTensor) -> Result<(Mat<f64>, Vec<f64>, Mat<f64>)> {
    init();
    if !matrix.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let m = to_mat(matrix);
    let svd = m
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("svd did not converge: {e:?}")))?;
    let s: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    Ok((svd.U().to_owned(), s, svd.V().to_owned()))
}

/// Truncated singular value decomposition keeping at most `max_rank` values.
///
/// Values below [`RANK_CUTOFF`] relative to the largest are dropped as
/// numerically zero; at least one value is always kept so the factors stay
/// well-formed for an all-zero input.
pub fn svd_truncate(matrix: &DenseTensor, max_rank: usize) -> Result<SvdResult> {
    if matrix.rank() != 2 {
        return Err(Error::Shape(format!(
            "svd needs a matrix, got shape {:?}",
            matrix.shape()
        )));
    }
    if max_rank == 0 {
        return Err(Error::InvalidInput("max_rank must be at least 1".into()));
    }
    let (u, s, v) = thin_svd(matrix)?;
    let smax = s.first().copied().unwrap_or(0.0);
    let numerical_rank = s.iter().take_while(|&&x| x > RANK_CUTOFF * smax).count();
    let keep = numerical_rank.min(max_rank).max(1);
    let discarded_weight = s[keep..].iter().map(|x| x * x).sum();

    let rows = matrix.rows();
    let cols = matrix.cols();
    let mut left = Vec::with_capacity(rows * keep);
    for i in 0..rows {
        for j in 0..keep {
            left.push(u[(i, j)]);
        }
    }
    let mut right = Vec::with_capacity(keep * cols);
    for j in 0..keep {
        for i in 0..cols {
            right.push(v[(i, j)]);
        }
    }
    Ok(SvdResult {
        left: DenseTensor::matrix(rows, keep, left)?,
        singular_values: s[..keep].to_vec(),
        right: DenseTensor::matrix(keep, cols, right)?,
        discarded_weight,
    })
}

/// Polar factor `W·Xᵀ` of `matrix = W·Σ·Xᵀ` for any shape.
///
/// For tall input the result has orthonormal columns, for wide input
/// orthonormal rows. It is the Frobenius-nearest such matrix when `matrix`
/// has full rank; in the rank-deficient case the factor is completed with
/// whatever singular vectors the decomposition returns.
pub fn polar_factor(matrix: &DenseTensor) -> Result<DenseTensor> {
    if matrix.rank() != 2 {
        return Err(Error::Shape("polar decomposition needs a matrix".into()));
    }
    if matrix.data().iter().all(|&x| x == 0.0) {
        return Err(Error::Degenerate("all-zero matrix has no unique polar factor".into()));
    }
    let (u, _, v) = thin_svd(matrix)?;
    let q = u * v.transpose();
    Ok(from_mat(q.as_ref()))
}

/// Orthogonal polar factor of a square matrix.
pub fn polar_unitary(matrix: &DenseTensor) -> Result<DenseTensor> {
    if matrix.rank() != 2 || matrix.rows() != matrix.cols() {
        return Err(Error::Shape(format!(
            "polar_unitary needs a square matrix, got {:?}",
            matrix.shape()
        )));
    }
    polar_factor(matrix)
}

/// Extends an `m × k` matrix with orthonormal columns to an `m × m`
/// orthogonal matrix whose first `k` columns are the input.
///
/// The completion comes from a Householder QR of the input and is therefore
/// a deterministic function of it.
pub fn complete_orthonormal(isometry: &DenseTensor) -> Result<DenseTensor> {
    init();
    let (m, k) = (isometry.rows(), isometry.cols());
    if k > m {
        return Err(Error::Shape(format!("cannot complete {m}x{k}: more columns than rows")));
    }
    if k == m {
        return Ok(isometry.clone());
    }
    let q = to_mat(isometry).qr().compute_Q();
    let mut out = DenseTensor::zeros(vec![m, m]);
    let src = isometry.data();
    let dst = out.data_mut();
    for i in 0..m {
        dst[i * m..i * m + k].copy_from_slice(&src[i * k..(i + 1) * k]);
        for j in k..m {
            dst[i * m + j] = q[(i, j)];
        }
    }
    Ok(out)
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues in non-increasing
/// order. Eigenvectors are the columns of the returned matrix.
pub fn symmetric_eigen(matrix: &DenseTensor) -> Result<(Vec<f64>, DenseTensor)> {
    init();
    let n = matrix.rows();
    if n != matrix.cols() {
        return Err(Error::Shape("eigen-decomposition needs a square matrix".into()));
    }
    if !matrix.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let evd = to_mat(matrix)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigen-decomposition failed: {e:?}")))?;
    let vals: Vec<f64> = evd.S().column_vector().iter().copied().collect();
    let u = evd.U();
    let mut out = DenseTensor::zeros(vec![n, n]);
    let mut values = Vec::with_capacity(n);
    for (dst_col, src_col) in (0..n).rev().enumerate() {
        values.push(vals[src_col]);
        for i in 0..n {
            out.set(&[i, dst_col], u[(i, src_col)]);
        }
    }
    Ok((values, out))
}

/// Replaces the columns `classes` of `matrix` by their polar factor and
/// fills the other columns with a deterministic orthonormal completion when
/// there are enough rows. The flag reports whether every column is now
/// orthonormal; otherwise the unused columns are zero.
pub fn orthogonalise_label_columns(matrix: &DenseTensor, classes: &[usize]) -> Result<(DenseTensor, bool)> {
    let (rows, dim) = (matrix.rows(), matrix.cols());
    let cols = DenseTensor::from_fn(vec![rows, classes.len()], |ix| matrix.get(&[ix[0], classes[ix[1]]]));
    let q = polar_factor(&cols)?;
    let mut out = DenseTensor::zeros(vec![rows, dim]);
    for i in 0..rows {
        for (k, &c) in classes.iter().enumerate() {
            out.set(&[i, c], q.get(&[i, k]));
        }
    }
    let isometric = rows >= dim;
    if isometric {
        let completed = complete_orthonormal(&q)?;
        let unused = (0..dim).filter(|b| !classes.contains(b));
        for (k, b) in unused.enumerate() {
            for i in 0..rows {
                out.set(&[i, b], completed.get(&[i, classes.len() + k]));
            }
        }
    }
    Ok((out, isometric))
}

/// Largest entry of `|MᵀM − I|`; zero for a matrix with orthonormal columns.
pub fn column_orthonormality_error(m: &DenseTensor) -> f64 {
    let g = matmul_tn(m, m);
    let n = g.rows();
    let mut err: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            err = err.max((g.get(&[i, j]) - target).abs());
        }
    }
    err
}
