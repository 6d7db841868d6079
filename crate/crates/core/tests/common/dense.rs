//! Dense reference constructions built on nalgebra.

use nalgebra::DMatrix;
use rand::Rng;
use tnc_core::classifier::Readout;
use tnc_core::{linalg, DenseTensor};

pub fn to_na(t: &DenseTensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

pub fn from_na(m: &DMatrix<f64>) -> DenseTensor {
    DenseTensor::from_fn(vec![m.nrows(), m.ncols()], |ix| m[(ix[0], ix[1])])
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn random_orthogonal(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    random_matrix(rng, n, n).qr().q()
}

/// Thin orthonormal columns.
pub fn random_isometry(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    random_orthogonal(rng, rows).columns(0, cols).into_owned()
}

/// Readout over random isometric legs and a centre with orthonormal label
/// columns, plus the dense classifier unitary assembled from the same
/// pieces.
pub fn random_readout(rng: &mut impl Rng, leg_qubits: &[usize], bonds: &[usize]) -> (Readout, DMatrix<f64>) {
    let legs: Vec<DMatrix<f64>> = leg_qubits
        .iter()
        .zip(bonds)
        .map(|(&n, &d)| random_isometry(rng, 1 << n, d))
        .collect();
    let inner: usize = bonds.iter().product();
    let centre = random_isometry(rng, inner, 16);
    let mut shape = bonds.to_vec();
    shape.push(16);
    let readout = Readout::new(
        legs.iter().map(from_na).collect(),
        DenseTensor::new(shape, from_na(&centre).into_data()).unwrap(),
        10,
        true,
    )
    .unwrap();
    // U = (⊗ Ê_k) Ĉ with the centre embedded at the leading rows of every
    // completed leg basis
    let full: Vec<DMatrix<f64>> = legs
        .iter()
        .map(|l| to_na(&linalg::complete_orthonormal(&from_na(l)).unwrap()))
        .collect();
    let outer: Vec<usize> = leg_qubits.iter().map(|&n| 1usize << n).collect();
    let total: usize = outer.iter().product();
    let mut embedded = DMatrix::zeros(total, 16);
    for flat in 0..inner {
        let mut rem = flat;
        let mut idx = vec![0; bonds.len()];
        for ax in (0..bonds.len()).rev() {
            idx[ax] = rem % bonds[ax];
            rem /= bonds[ax];
        }
        let row = idx.iter().zip(&outer).fold(0, |acc, (&i, &e)| acc * e + i);
        for b in 0..16 {
            embedded[(row, b)] = centre[(flat, b)];
        }
    }
    let c_hat = to_na(&linalg::complete_orthonormal(&from_na(&embedded)).unwrap());
    let legs_kron = full.iter().fold(DMatrix::identity(1, 1), |acc, l| acc.kronecker(l));
    (readout, legs_kron * c_hat)
}
