//! Dense row-major tensors and the handful of index manipulations the
//! network code needs: reshape, axis permutation, and pairwise contraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero extent in shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        assert!(shape.iter().all(|&e| e > 0), "zero extent in {shape:?}");
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        let mut idx = vec![0usize; t.rank()];
        for k in 0..t.data.len() {
            t.data[k] = f(&idx);
            for ax in (0..idx.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < t.shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        t
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len().max(1);
        let data = if data.is_empty() { vec![0.0] } else { data };
        Self { shape: vec![n], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[0]
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[1]
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let o = self.offset(idx);
        self.data[o] = value;
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &e)| {
            debug_assert!(i < e);
            acc * e + i
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.scale(factor);
        self
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() || shape.contains(&0) {
            return Err(Error::Shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Reorders axes so that output axis `k` is input axis `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Shape(format!("{perm:?} is not a permutation of {r} axes")));
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }
        let mut in_strides = vec![1usize; r];
        for ax in (0..r.saturating_sub(1)).rev() {
            in_strides[ax] = in_strides[ax + 1] * self.shape[ax + 1];
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut out = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; r];
        let mut src = 0usize;
        for _ in 0..self.data.len() {
            out.push(self.data[src]);
            for ax in (0..r).rev() {
                idx[ax] += 1;
                src += strides[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                src -= strides[ax] * out_shape[ax];
                idx[ax] = 0;
            }
        }
        Ok(Self {
            shape: out_shape,
            data: out,
        })
    }

    pub fn transpose(&self) -> Self {
        assert_eq!(self.rank(), 2, "transpose needs a matrix");
        self.permute(&[1, 0]).expect("valid permutation")
    }

    /// Views the tensor as a matrix by grouping the first `split` axes into rows.
    pub fn matricise(&self, split: usize) -> Self {
        let rows: usize = self.shape[..split].iter().product();
        let cols: usize = self.shape[split..].iter().product();
        Self {
            shape: vec![rows, cols],
            data: self.data.clone(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "cannot add {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl DenseTensor {
    /// Applies `m` (shape `old × new`) to axis `axis`, keeping the axis in place.
    pub fn apply_on_axis(&self, axis: usize, m: &DenseTensor) -> Result<Self> {
        let out = contract(self, m, &[(axis, 0)])?;
        let r = self.rank();
        // contract moved the new axis to the end
        let mut perm: Vec<usize> = (0..r - 1).collect();
        perm.insert(axis, r - 1);
        out.permute(&perm)
    }
}

/// Direct sum of equally-ranked tensors.
///
/// Axes flagged in `direct` are concatenated and every term occupies its own
/// block along them; the remaining axes must agree and are shared. With every
/// axis shared the result is the plain sum.
pub fn block_sum(terms: &[&DenseTensor], direct: &[bool]) -> Result<DenseTensor> {
    let first = terms.first().ok_or(Error::EmptyInput("block_sum terms"))?;
    let r = first.rank();
    if direct.len() != r {
        return Err(Error::Shape(format!("{} direct flags for rank {r}", direct.len())));
    }
    for t in terms {
        if t.rank() != r || (0..r).any(|ax| !direct[ax] && t.shape[ax] != first.shape[ax]) {
            return Err(Error::Shape(format!(
                "cannot block-sum {:?} with {:?}",
                first.shape, t.shape
            )));
        }
    }
    let shape: Vec<usize> = (0..r)
        .map(|ax| {
            if direct[ax] {
                terms.iter().map(|t| t.shape[ax]).sum()
            } else {
                first.shape[ax]
            }
        })
        .collect();
    let mut out = DenseTensor::zeros(shape);
    let mut offset = vec![0usize; r];
    let mut idx = vec![0usize; r];
    for t in terms {
        let mut src_idx = vec![0usize; r];
        for &x in &t.data {
            for ax in 0..r {
                idx[ax] = src_idx[ax] + offset[ax];
            }
            let o = out.offset(&idx);
            out.data[o] += x;
            for ax in (0..r).rev() {
                src_idx[ax] += 1;
                if src_idx[ax] < t.shape[ax] {
                    break;
                }
                src_idx[ax] = 0;
            }
        }
        for ax in 0..r {
            if direct[ax] {
                offset[ax] += t.shape[ax];
            }
        }
    }
    Ok(out)
}

/// Contracts `a` and `b` over the paired axes `(axis_of_a, axis_of_b)`.
/// Output axes are the free axes of `a` followed by the free axes of `b`.
pub fn contract(a: &DenseTensor, b: &DenseTensor, axis_pairs: &[(usize, usize)]) -> Result<DenseTensor> {
    for &(i, j) in axis_pairs {
        if i >= a.rank() || j >= b.rank() {
            return Err(Error::Shape(format!("axis pair ({i}, {j}) out of range")));
        }
        if a.shape[i] != b.shape[j] {
            return Err(Error::Shape(format!(
                "axis {i} of {:?} does not match axis {j} of {:?}",
                a.shape, b.shape
            )));
        }
    }
    let a_con: Vec<usize> = axis_pairs.iter().map(|p| p.0).collect();
    let b_con: Vec<usize> = axis_pairs.iter().map(|p| p.1).collect();
    let a_free: Vec<usize> = (0..a.rank()).filter(|x| !a_con.contains(x)).collect();
    let b_free: Vec<usize> = (0..b.rank()).filter(|x| !b_con.contains(x)).collect();

    let a_perm: Vec<usize> = a_free.iter().chain(&a_con).copied().collect();
    let b_perm: Vec<usize> = b_con.iter().chain(&b_free).copied().collect();
    let inner: usize = a_con.iter().map(|&i| a.shape[i]).product();
    let a_rows: usize = a_free.iter().map(|&i| a.shape[i]).product();
    let b_cols: usize = b_free.iter().map(|&i| b.shape[i]).product();

    let am = a.permute(&a_perm)?.reshape(vec![a_rows, inner])?;
    let bm = b.permute(&b_perm)?.reshape(vec![inner, b_cols])?;
    let prod = linalg::matmul(&am, &bm);

    let mut shape: Vec<usize> = a_free.iter().map(|&i| a.shape[i]).collect();
    shape.extend(b_free.iter().map(|&i| b.shape[i]));
    if shape.is_empty() {
        shape.push(1);
    }
    prod.reshape(shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> DenseTensor {
        DenseTensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(DenseTensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(DenseTensor::new(vec![0, 2], vec![]).is_err());
    }

    #[test]
    fn identity_contraction() {
        let id = DenseTensor::identity(2);
        let v = DenseTensor::vector(vec![0.3, -1.7]);
        let out = contract(&id, &v, &[(1, 0)]).unwrap();
        assert_eq!(out.data(), &[0.3, -1.7]);
    }

    #[test]
    fn self_overlap_of_unit_vector() {
        let v = DenseTensor::vector(vec![0.6, 0.8]);
        let out = contract(&v, &v, &[(0, 0)]).unwrap();
        assert_abs_diff_eq!(out.data()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(vec![2, 3], &mut rng);
        let b = random(vec![3, 4], &mut rng);
        let c = contract(&a, &b, &[(1, 0)]).unwrap();
        assert_eq!(c.shape(), &[2, 4]);
        for i in 0..2 {
            for j in 0..4 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += a.get(&[i, k]) * b.get(&[k, j]);
                }
                assert_abs_diff_eq!(c.get(&[i, j]), s, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn rank3_contraction_orders_free_axes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(vec![2, 3, 4], &mut rng);
        let b = random(vec![4, 5, 3], &mut rng);
        let c = contract(&a, &b, &[(1, 2), (2, 0)]).unwrap();
        assert_eq!(c.shape(), &[2, 5]);
        for i in 0..2 {
            for j in 0..5 {
                let mut s = 0.0;
                for x in 0..3 {
                    for y in 0..4 {
                        s += a.get(&[i, x, y]) * b.get(&[y, j, x]);
                    }
                }
                assert_abs_diff_eq!(c.get(&[i, j]), s, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn extent_mismatch_is_a_shape_error() {
        let a = DenseTensor::zeros(vec![2, 3]);
        let b = DenseTensor::zeros(vec![2, 3]);
        assert!(matches!(contract(&a, &b, &[(1, 0)]), Err(Error::Shape(_))));
    }

    #[test]
    fn permute_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random(vec![2, 3, 4], &mut rng);
        let p = a.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.get(&[3, 1, 2]), a.get(&[1, 2, 3]));
        let back = p.permute(&[1, 2, 0]).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn contraction_is_bilinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random(vec![3, 4], &mut rng);
            let b = random(vec![3, 4], &mut rng);
            let c = random(vec![4, 2], &mut rng);
            let alpha: f64 = rng.gen_range(-2.0..2.0);
            let mut combo = a.clone().scaled(alpha);
            combo.add_assign(&b).unwrap();
            let lhs = contract(&combo, &c, &[(1, 0)]).unwrap();
            let mut rhs = contract(&a, &c, &[(1, 0)]).unwrap().scaled(alpha);
            rhs.add_assign(&contract(&b, &c, &[(1, 0)]).unwrap()).unwrap();
            assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }

    #[test]
    fn apply_on_axis_keeps_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random(vec![2, 3, 4], &mut rng);
        let m = random(vec![3, 5], &mut rng);
        let c = a.apply_on_axis(1, &m).unwrap();
        assert_eq!(c.shape(), &[2, 5, 4]);
        let mut s = 0.0;
        for x in 0..3 {
            s += a.get(&[1, x, 2]) * m.get(&[x, 4]);
        }
        assert_abs_diff_eq!(c.get(&[1, 4, 2]), s, epsilon = 1e-14);
    }

    #[test]
    fn block_sum_places_blocks_on_direct_axes() {
        let a = DenseTensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let b = DenseTensor::matrix(1, 2, vec![3.0, 4.0]).unwrap();
        let diag = block_sum(&[&a, &b], &[true, true]).unwrap();
        assert_eq!(diag.shape(), &[2, 4]);
        assert_eq!(diag.data(), &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 3.0, 4.0]);
        let rows = block_sum(&[&a, &b], &[true, false]).unwrap();
        assert_eq!(rows.data(), &[1.0, 2.0, 3.0, 4.0]);
        let shared = block_sum(&[&a, &b], &[false, false]).unwrap();
        assert_eq!(shared.data(), &[4.0, 6.0]);
        assert!(block_sum(&[&a, &b.transpose()], &[false, true]).is_err());
    }
}
