//! Matrix product states: encoding, block addition, compression, batched
//! sum states, class labelling, and the orthogonalised MPO classifier.
//!
//! Site tensors have axes `(left bond, physical, right bond)`. Qubit sites
//! have physical extent 2. A labelled state additionally carries one
//! reference site of physical extent [`LABEL_DIM`](crate::LABEL_DIM) that
//! sits between two qubit sites and holds the label index.

use serde::{Deserialize, Serialize};

use crate::classifier::Readout;
use crate::dataset::{AmplitudeVector, Dataset};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{self, svd_truncate};
use crate::tensor::{block_sum, DenseTensor};

/// Largest qubit count that [`Mps::decode`] will expand densely.
pub const DEFAULT_DENSE_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Centre {
    /// Sites left of the index are left-isometries, sites right of it
    /// right-isometries.
    Site(usize),
    /// Diagonal weights on the bond between sites `bond − 1` and `bond`.
    /// Sites left of the bond are left-isometries, the rest right-isometries.
    Bond { bond: usize, weights: Vec<f64> },
    /// No gauge guarantees, e.g. straight after an addition.
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mps {
    sites: Vec<DenseTensor>,
    centre: Centre,
    /// Index into `sites` of the reference site, if labelled.
    reference: Option<usize>,
    /// Classes whose reference slices are populated, in insertion order.
    labels: Vec<usize>,
}

/// Centre bond used by encoding and labelling: `ceil(n / 2)`.
pub fn centre_bond(qubits: usize) -> usize {
    qubits.div_ceil(2)
}

fn site_from(m: DenseTensor, l: usize, p: usize, r: usize) -> DenseTensor {
    m.reshape(vec![l, p, r]).expect("site extents match")
}

impl Mps {
    /// Validates bond consistency; boundary bonds must have extent 1.
    pub fn from_sites(
        sites: Vec<DenseTensor>,
        centre: Centre,
        reference: Option<usize>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::EmptyInput("mps sites"));
        }
        for (n, s) in sites.iter().enumerate() {
            if s.rank() != 3 {
                return Err(Error::Shape(format!("site {n} has shape {:?}", s.shape())));
            }
        }
        for n in 1..sites.len() {
            if sites[n - 1].shape()[2] != sites[n].shape()[0] {
                return Err(Error::Shape(format!("bond {n} extents disagree")));
            }
        }
        if sites[0].shape()[0] != 1 || sites[sites.len() - 1].shape()[2] != 1 {
            return Err(Error::Shape("boundary bonds must have extent 1".into()));
        }
        if let Some(r) = reference {
            if r >= sites.len() {
                return Err(Error::Shape(format!("reference index {r} out of range")));
            }
        }
        if let Centre::Bond { bond, weights } = &centre {
            if *bond == 0 || *bond > sites.len() || weights.len() != bond_extent(&sites, *bond) {
                return Err(Error::Shape(format!("invalid bond centre at {bond}")));
            }
        }
        Ok(Self {
            sites,
            centre,
            reference,
            labels,
        })
    }

    /// Product state with one qubit per entry of `qubits`, each a 2-vector.
    pub fn product(qubits: &[[f64; 2]]) -> Result<Self> {
        let sites = qubits
            .iter()
            .map(|q| DenseTensor::new(vec![1, 2, 1], q.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_sites(sites, Centre::Unknown, None, Vec::new())
    }

    pub fn sites(&self) -> &[DenseTensor] {
        &self.sites
    }

    pub fn centre(&self) -> &Centre {
        &self.centre
    }

    pub fn reference_index(&self) -> Option<usize> {
        self.reference
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn qubit_count(&self) -> usize {
        self.sites.len() - usize::from(self.reference.is_some())
    }

    /// Extents of the internal bonds, left to right.
    pub fn bond_dims(&self) -> Vec<usize> {
        self.sites[1..].iter().map(|s| s.shape()[0]).collect()
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    fn is_labelled(&self) -> bool {
        self.reference.is_some()
    }

    /// Expands to a dense vector in row-major qubit order.
    pub fn decode(&self) -> Result<Vec<f64>> {
        self.decode_with_limit(DEFAULT_DENSE_LIMIT)
    }

    pub fn decode_with_limit(&self, limit: usize) -> Result<Vec<f64>> {
        if self.is_labelled() {
            return Err(Error::InvalidInput(
                "labelled state: select a label before decoding".into(),
            ));
        }
        let n = self.qubit_count();
        if n > limit {
            return Err(Error::Capacity { qubits: n, limit });
        }
        let m = self.clone().absorb_centre();
        let mut acc = DenseTensor::identity(1);
        for s in &m.sites {
            let (p, r) = (s.shape()[1], s.shape()[2]);
            let rows = acc.rows();
            let next = linalg::matmul(&acc, &s.matricise(1));
            acc = next.reshape(vec![rows * p, r])?;
        }
        Ok(acc.into_data())
    }

    /// Contracts a bond centre into the site on its left.
    pub fn absorb_centre(mut self) -> Self {
        if let Centre::Bond { bond, weights } = &self.centre {
            let site = &mut self.sites[bond - 1];
            let r = site.shape()[2];
            for row in site.data_mut().chunks_exact_mut(r) {
                for (x, w) in row.iter_mut().zip(weights) {
                    *x *= w;
                }
            }
            self.centre = Centre::Site(bond - 1);
        }
        self
    }

    /// `⟨self|other⟩` by transfer-matrix contraction. Both states must have
    /// the same site layout.
    pub fn overlap(&self, other: &Mps) -> Result<f64> {
        if self.sites.len() != other.sites.len() || self.reference != other.reference {
            return Err(Error::Shape("overlap of differently shaped states".into()));
        }
        let a = self.clone().absorb_centre();
        let b = other.clone().absorb_centre();
        let mut env = DenseTensor::identity(1);
        for (x, y) in a.sites.iter().zip(&b.sites) {
            if x.shape()[1] != y.shape()[1] {
                return Err(Error::Shape("physical extents differ".into()));
            }
            // env[l, l'] x[l, p, r] y[l', p, r'] -> [r, r']
            let t = crate::tensor::contract(&env, x, &[(0, 0)])?;
            env = crate::tensor::contract(&t, y, &[(0, 0), (1, 1)])?;
        }
        Ok(env.data()[0])
    }

    pub fn norm(&self) -> f64 {
        self.overlap(self).map(|x| x.max(0.0).sqrt()).unwrap_or(0.0)
    }

    /// Multiplies the state by `factor`, keeping the gauge.
    pub fn scale(&mut self, factor: f64) {
        match &mut self.centre {
            Centre::Bond { weights, .. } => weights.iter_mut().for_each(|w| *w *= factor),
            Centre::Site(c) => self.sites[*c].scale(factor),
            Centre::Unknown => self.sites[0].scale(factor),
        }
    }

    /// Largest deviation of any site from its canonical isometry condition.
    /// Returns `f64::INFINITY` when the state has no canonical centre.
    pub fn isometry_error(&self) -> f64 {
        let (left_end, right_start) = match &self.centre {
            Centre::Site(c) => (*c, c + 1),
            Centre::Bond { bond, .. } => (*bond, *bond),
            Centre::Unknown => return f64::INFINITY,
        };
        let mut err: f64 = 0.0;
        for s in &self.sites[..left_end] {
            let (l, p, r) = (s.shape()[0], s.shape()[1], s.shape()[2]);
            let m = s.clone().reshape(vec![l * p, r]).expect("site reshape");
            err = err.max(linalg::column_orthonormality_error(&m));
        }
        for s in &self.sites[right_start.min(self.sites.len())..] {
            let (l, p, r) = (s.shape()[0], s.shape()[1], s.shape()[2]);
            let m = s.clone().reshape(vec![l, p * r]).expect("site reshape");
            err = err.max(linalg::column_orthonormality_error(&m.transpose()));
        }
        err
    }

    /// Brings the state into mixed canonical form with the centre matrix on
    /// bond `bond`, returned separately (`D_left × D_right`). Exact.
    fn split_at_bond(mut self, bond: usize) -> Result<(Self, DenseTensor)> {
        self = self.absorb_centre();
        let n = self.sites.len();
        debug_assert!(bond >= 1 && bond <= n);
        let mut carry = DenseTensor::identity(1);
        for k in 0..bond {
            let s = absorb_left(&carry, &self.sites[k])?;
            let (l, p, r) = (s.shape()[0], s.shape()[1], s.shape()[2]);
            let svd = svd_truncate(&s.reshape(vec![l * p, r])?, usize::MAX)?;
            let k_new = svd.rank();
            self.sites[k] = site_from(svd.left.clone(), l, p, k_new);
            carry = svd.right_scaled();
        }
        let mut rcarry = DenseTensor::identity(1);
        for k in (bond..n).rev() {
            let s = absorb_right(&self.sites[k], &rcarry)?;
            let (l, p, r) = (s.shape()[0], s.shape()[1], s.shape()[2]);
            let svd = svd_truncate(&s.reshape(vec![l, p * r])?, usize::MAX)?;
            let k_new = svd.rank();
            self.sites[k] = site_from(svd.right.clone(), k_new, p, r);
            rcarry = svd.left_scaled();
        }
        let centre = linalg::matmul(&carry, &rcarry);
        self.centre = Centre::Unknown;
        Ok((self, centre))
    }
}

fn bond_extent(sites: &[DenseTensor], bond: usize) -> usize {
    if bond == sites.len() {
        sites[bond - 1].shape()[2]
    } else {
        sites[bond].shape()[0]
    }
}

/// `carry (k × l) · site (l, p, r)` as a `(k, p, r)` site.
fn absorb_left(carry: &DenseTensor, site: &DenseTensor) -> Result<DenseTensor> {
    let (l, p, r) = (site.shape()[0], site.shape()[1], site.shape()[2]);
    let m = linalg::matmul(carry, &site.clone().reshape(vec![l, p * r])?);
    m.reshape(vec![carry.rows(), p, r])
}

/// `site (l, p, r) · carry (r × k)` as an `(l, p, k)` site.
fn absorb_right(site: &DenseTensor, carry: &DenseTensor) -> Result<DenseTensor> {
    let (l, p, r) = (site.shape()[0], site.shape()[1], site.shape()[2]);
    let m = linalg::matmul(&site.clone().reshape(vec![l * p, r])?, carry);
    m.reshape(vec![l, p, carry.cols()])
}

/// Encodes a unit vector as an MPS in mixed canonical form with a diagonal
/// bond centre at [`centre_bond`]. Every bond is truncated to `d_encode`.
pub fn encode(v: &AmplitudeVector, d_encode: usize) -> Result<Mps> {
    encode_amplitudes(&v.amplitudes, d_encode)
}

pub fn encode_amplitudes(amplitudes: &[f64], d_encode: usize) -> Result<Mps> {
    if d_encode == 0 {
        return Err(Error::InvalidInput("d_encode must be at least 1".into()));
    }
    if !amplitudes.len().is_power_of_two() || amplitudes.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "amplitude count {} is not a power of two ≥ 2",
            amplitudes.len()
        )));
    }
    let n = amplitudes.len().trailing_zeros() as usize;
    let c = centre_bond(n);
    let mut sites: Vec<DenseTensor> = Vec::with_capacity(n);

    // left sweep: rest has shape (D_left, 2^(n - k))
    let mut rest = DenseTensor::matrix(1, amplitudes.len(), amplitudes.to_vec())?;
    for _ in 0..c {
        let l = rest.rows();
        let cols = rest.cols() / 2;
        let svd = svd_truncate(&rest.reshape(vec![l * 2, cols])?, d_encode)?;
        sites.push(site_from(svd.left.clone(), l, 2, svd.rank()));
        rest = svd.right_scaled();
    }

    // right sweep: rest has shape (D_c · 2^m, r) with m qubits still unsplit
    let dc = rest.rows();
    let mut rest = rest.reshape(vec![dc << (n - c), 1])?;
    let mut right_sites: Vec<DenseTensor> = Vec::with_capacity(n - c);
    for _ in c..n {
        let r = rest.cols();
        let rows = rest.rows() / 2;
        let svd = svd_truncate(&rest.reshape(vec![rows, 2 * r])?, d_encode)?;
        right_sites.push(site_from(svd.right.clone(), svd.rank(), 2, r));
        rest = svd.left_scaled();
    }

    // rest is now the (D_left, D_right) centre matrix; diagonalise it
    let svd = svd_truncate(&rest, d_encode)?;
    if let Some(last) = sites.last_mut() {
        *last = absorb_right(last, &svd.left)?;
    }
    let mut right_sites: Vec<DenseTensor> = right_sites.into_iter().rev().collect();
    if let Some(first) = right_sites.first_mut() {
        *first = absorb_left(&svd.right, first)?;
    }
    sites.extend(right_sites);
    Mps::from_sites(
        sites,
        Centre::Bond {
            bond: c,
            weights: svd.singular_values,
        },
        None,
        Vec::new(),
    )
}

/// Exact direct sum of states with equal layout. The result decodes to the
/// sum of the decoded terms and has no canonical centre.
pub fn add_mps(terms: &[Mps]) -> Result<Mps> {
    let first = terms.first().ok_or(Error::EmptyInput("add_mps terms"))?;
    let n = first.sites.len();
    for t in terms {
        if t.sites.len() != n || t.reference != first.reference {
            return Err(Error::Shape(format!(
                "cannot add states with {} and {} sites",
                n,
                t.sites.len()
            )));
        }
    }
    let absorbed: Vec<Mps> = terms.iter().map(|t| t.clone().absorb_centre()).collect();
    let mut sites = Vec::with_capacity(n);
    for k in 0..n {
        let parts: Vec<&DenseTensor> = absorbed.iter().map(|t| &t.sites[k]).collect();
        sites.push(block_sum(&parts, &[k > 0, false, k + 1 < n])?);
    }
    let mut labels: Vec<usize> = Vec::new();
    for t in terms {
        labels.extend(&t.labels);
    }
    let mut seen = Vec::new();
    labels.retain(|l| {
        let fresh = !seen.contains(l);
        seen.push(*l);
        fresh
    });
    Mps::from_sites(sites, Centre::Unknown, first.reference, labels)
}

/// Truncates every bond to at most `d_max`.
///
/// The state is first left-canonicalised, then swept right to left with
/// truncated SVDs, and finally re-gauged so the centre sits on the reference
/// site if there is one or on site `centre_bond − 1` otherwise. Returns the
/// compressed state and the total discarded weight, which equals
/// `‖ψ − ψ̃‖²` exactly.
pub fn compress(m: &Mps, d_max: usize) -> Result<(Mps, f64)> {
    if d_max == 0 {
        return Err(Error::InvalidInput("d_max must be at least 1".into()));
    }
    let mut m = m.clone().absorb_centre();
    let n = m.sites.len();

    let mut carry = DenseTensor::identity(1);
    for k in 0..n {
        let s = absorb_left(&carry, &m.sites[k])?;
        if k + 1 == n {
            m.sites[k] = s;
            break;
        }
        let (l, p, r) = (s.shape()[0], s.shape()[1], s.shape()[2]);
        let svd = svd_truncate(&s.reshape(vec![l * p, r])?, usize::MAX)?;
        m.sites[k] = site_from(svd.left.clone(), l, p, svd.rank());
        carry = svd.right_scaled();
    }

    let mut discarded = 0.0;
    for k in (1..n).rev() {
        let s = &m.sites[k];
        let (l, p, r) = (s.shape()[0], s.shape()[1], s.shape()[2]);
        let svd = svd_truncate(&s.clone().reshape(vec![l, p * r])?, d_max)?;
        discarded += svd.discarded_weight;
        m.sites[k] = site_from(svd.right.clone(), svd.rank(), p, r);
        m.sites[k - 1] = absorb_right(&m.sites[k - 1], &svd.left_scaled())?;
    }

    let target = m
        .reference
        .unwrap_or_else(|| centre_bond(m.qubit_count()).saturating_sub(1));
    for k in 0..target {
        let s = &m.sites[k];
        let (l, p, r) = (s.shape()[0], s.shape()[1], s.shape()[2]);
        let svd = svd_truncate(&s.clone().reshape(vec![l * p, r])?, usize::MAX)?;
        m.sites[k] = site_from(svd.left.clone(), l, p, svd.rank());
        m.sites[k + 1] = absorb_left(&svd.right_scaled(), &m.sites[k + 1])?;
    }
    m.centre = Centre::Site(target);
    Ok((m, discarded))
}

/// Summary of a batched sum-state construction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub images: usize,
    pub batches: usize,
    pub discarded_weight: f64,
}

/// Sums states in batches of `batch_size`, compressing each batch to
/// `d_batch`, then folds the batch sums into an accumulator in input order,
/// compressing after every step.
pub fn batch_sum(images: &[Mps], batch_size: usize, d_batch: usize) -> Result<Mps> {
    batch_sum_by(images, batch_size, d_batch, Execution::Sequential, |m| Ok(m.clone())).map(|r| r.0)
}

/// [`batch_sum`] over arbitrary items converted by `encode` inside each
/// batch, so only one batch of encoded states is alive per worker. Batches
/// are built in parallel under `exec`; the fold is always sequential.
pub fn batch_sum_by<T, F>(
    items: &[T],
    batch_size: usize,
    d_batch: usize,
    exec: Execution,
    encode: F,
) -> Result<(Mps, BatchStats)>
where
    T: Sync,
    F: Fn(&T) -> Result<Mps> + Sync + Send,
{
    if items.is_empty() {
        return Err(Error::EmptyInput("batch_sum images"));
    }
    if batch_size < 2 {
        return Err(Error::InvalidInput("batch_size must be at least 2".into()));
    }
    let chunks: Vec<&[T]> = items.chunks(batch_size).collect();
    let sums = exec.try_map(&chunks, |chunk| -> Result<(Mps, f64)> {
        let states = chunk.iter().map(&encode).collect::<Result<Vec<_>>>()?;
        compress(&add_mps(&states)?, d_batch)
    })?;
    let mut stats = BatchStats {
        images: items.len(),
        batches: chunks.len(),
        discarded_weight: 0.0,
    };
    let mut iter = sums.into_iter();
    let (mut acc, w) = iter.next().expect("at least one batch");
    stats.discarded_weight += w;
    for (batch, w) in iter {
        let (next, w2) = compress(&add_mps(&[acc, batch])?, d_batch)?;
        stats.discarded_weight += w + w2;
        acc = next;
    }
    Ok((acc, stats))
}

/// Bitstring value of a class label; labels are plain binary.
pub fn label_bitstring(class_id: usize, label_qubits: usize) -> Result<usize> {
    if class_id >= 1 << label_qubits {
        return Err(Error::LabelOverflow { class_id, label_qubits });
    }
    Ok(class_id)
}

/// Inserts a reference site at [`centre_bond`] whose only populated label
/// slice is `class_id`. Selecting that label recovers the input state.
pub fn attach_label(sum_state: &Mps, class_id: usize, label_qubits: usize) -> Result<Mps> {
    let b = label_bitstring(class_id, label_qubits)?;
    if sum_state.is_labelled() {
        return Err(Error::InvalidInput("state is already labelled".into()));
    }
    let bond = centre_bond(sum_state.qubit_count()).max(1);
    let (mut m, centre) = sum_state.clone().split_at_bond(bond)?;
    let (dl, dr) = (centre.rows(), centre.cols());
    let dim = 1usize << label_qubits;
    let mut r = DenseTensor::zeros(vec![dl, dim, dr]);
    for i in 0..dl {
        for j in 0..dr {
            r.set(&[i, b, j], centre.get(&[i, j]));
        }
    }
    m.sites.insert(bond, r);
    m.reference = Some(bond);
    m.centre = Centre::Site(bond);
    m.labels = vec![class_id];
    Ok(m)
}

impl Mps {
    /// Contracts the reference site with label `b`, giving an unlabelled state.
    pub fn select_label(&self, b: usize) -> Result<Mps> {
        let r_idx = self
            .reference
            .ok_or_else(|| Error::InvalidInput("state has no reference site".into()))?;
        let r = &self.sites[r_idx];
        let (dl, dim, dr) = (r.shape()[0], r.shape()[1], r.shape()[2]);
        if b >= dim {
            return Err(Error::InvalidInput(format!("label {b} outside {dim} reference states")));
        }
        let slice = DenseTensor::from_fn(vec![dl, dr], |ix| r.get(&[ix[0], b, ix[1]]));
        let mut sites = self.sites.clone();
        sites.remove(r_idx);
        // the reference sits strictly inside the chain, so r_idx − 1 exists
        sites[r_idx - 1] = absorb_right(&sites[r_idx - 1], &slice)?;
        Mps::from_sites(sites, Centre::Site(r_idx - 1), None, Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpoClassifier {
    /// Labelled state with its centre on the reference site.
    pub mps: Mps,
    pub class_count: usize,
    pub label_qubits: usize,
    pub d_final: usize,
    /// Whether the label columns of the reference tensor are orthonormal.
    pub orthogonalised: bool,
}

/// Rows `(i, j)` and columns `δ` of a reference tensor `(i, δ, j)`.
fn reference_matrix(r: &DenseTensor) -> DenseTensor {
    let (dl, dim, dr) = (r.shape()[0], r.shape()[1], r.shape()[2]);
    r.permute(&[0, 2, 1])
        .expect("rank 3")
        .reshape(vec![dl * dr, dim])
        .expect("same size")
}

fn reference_tensor(m: &DenseTensor, dl: usize, dr: usize) -> DenseTensor {
    let dim = m.cols();
    m.clone()
        .reshape(vec![dl, dr, dim])
        .expect("same size")
        .permute(&[0, 2, 1])
        .expect("rank 3")
}

/// Orthogonalises the label columns of the reference tensor. Returns
/// whether the full label register is now an isometry.
fn orthogonalise_reference(m: &mut Mps, classes: &[usize]) -> Result<bool> {
    let r_idx = m.reference.expect("labelled");
    let r = &m.sites[r_idx];
    let (dl, dr) = (r.shape()[0], r.shape()[2]);
    let (q, isometric) = linalg::orthogonalise_label_columns(&reference_matrix(r), classes)?;
    m.sites[r_idx] = reference_tensor(&q, dl, dr);
    Ok(isometric)
}

/// Combines one labelled sum state per class into a single classifier.
///
/// Each input is normalised, the inputs are block-summed, every bond is
/// compressed to `d_final`, and (when `orthogonalise` is set) the reference
/// tensor is replaced by its polar factor so the generated class states are
/// orthonormal.
pub fn combine_orthogonalise(labelled_sums: &[Mps], d_final: usize, orthogonalise: bool) -> Result<MpoClassifier> {
    let first = labelled_sums.first().ok_or(Error::EmptyInput("labelled sums"))?;
    let r_idx = first
        .reference
        .ok_or_else(|| Error::InvalidInput("sum states must be labelled".into()))?;
    let dim = first.sites[r_idx].shape()[1];
    let mut classes: Vec<usize> = Vec::new();
    let mut normalised = Vec::with_capacity(labelled_sums.len());
    for s in labelled_sums {
        for &l in &s.labels {
            if classes.contains(&l) {
                return Err(Error::LabelCollision(l));
            }
            classes.push(l);
        }
        let norm = s.norm();
        if norm == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let mut t = s.clone();
        t.scale(1.0 / norm);
        normalised.push(t);
    }
    let (mut mps, _) = compress(&add_mps(&normalised)?, d_final)?;
    mps.labels = classes.clone();
    let orthogonalised = if orthogonalise {
        orthogonalise_reference(&mut mps, &classes)?
    } else {
        false
    };
    Ok(MpoClassifier {
        mps,
        class_count: classes.iter().max().map_or(0, |m| m + 1),
        label_qubits: dim.trailing_zeros() as usize,
        d_final,
        orthogonalised,
    })
}

impl MpoClassifier {
    pub fn qubit_count(&self) -> usize {
        self.mps.qubit_count()
    }

    /// Dense class state generated from reference label `b`.
    pub fn class_state(&self, b: usize) -> Result<Vec<f64>> {
        self.mps.select_label(b)?.decode()
    }

    /// Dense leg isometries and reference tensor used for scoring.
    pub fn readout(&self) -> Result<Readout> {
        let r_idx = self.mps.reference.expect("classifier is labelled");
        let sites = &self.mps.sites;
        let left = contract_chain(&sites[..r_idx], Side::Left)?;
        let right = contract_chain(&sites[r_idx + 1..], Side::Right)?;
        let r = &sites[r_idx];
        let centre = r.permute(&[0, 2, 1])?;
        Readout::new(vec![left, right], centre, self.class_count, self.orthogonalised)
    }
}

#[derive(Clone, Copy)]
enum Side {
    Left,
    Right,
}

/// Contracts a run of sites into a matrix with physical rows: for the left
/// run `(2^n, D_right)`, for the right run `(2^n, D_left)`.
fn contract_chain(sites: &[DenseTensor], side: Side) -> Result<DenseTensor> {
    if sites.is_empty() {
        return Ok(DenseTensor::identity(1));
    }
    match side {
        Side::Left => {
            let mut acc = DenseTensor::identity(sites[0].shape()[0]);
            for s in sites {
                let (p, r) = (s.shape()[1], s.shape()[2]);
                let rows = acc.rows();
                acc = linalg::matmul(&acc, &s.matricise(1)).reshape(vec![rows * p, r])?;
            }
            Ok(acc)
        }
        Side::Right => {
            // acc has shape (D_left of the current site, physical block)
            let mut acc = DenseTensor::identity(sites[sites.len() - 1].shape()[2]);
            for s in sites.iter().rev() {
                let (l, p) = (s.shape()[0], s.shape()[1]);
                let cols = acc.cols();
                acc = linalg::matmul(&s.matricise(2), &acc).reshape(vec![l, p * cols])?;
            }
            Ok(acc.transpose())
        }
    }
}

/// Settings for building a classifier from a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildPlan {
    pub d_encode: usize,
    pub d_batch: usize,
    pub d_final: usize,
    pub batch_size: usize,
    pub orthogonalise: bool,
}

impl Default for BuildPlan {
    fn default() -> Self {
        Self {
            d_encode: 32,
            d_batch: 32,
            d_final: 32,
            batch_size: 10,
            orthogonalise: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Batching {
    /// Sum each class separately, then combine.
    #[default]
    ClassFirst,
    /// Label every image first and batch across classes in dataset order.
    Mixed,
}

/// Per-class sum states, labelled, in class order.
pub fn class_sum_states(data: &Dataset, plan: &BuildPlan, exec: Execution) -> Result<(Vec<Mps>, Vec<BatchStats>)> {
    let mut sums = Vec::with_capacity(data.class_count);
    let mut stats = Vec::with_capacity(data.class_count);
    for class in 0..data.class_count {
        let items = data.class_items(class);
        if items.is_empty() {
            return Err(Error::MissingClass(class));
        }
        let (sum, st) = batch_sum_by(&items, plan.batch_size, plan.d_batch, exec, |v| {
            encode(v, plan.d_encode)
        })?;
        log::debug!(
            "class {class}: {} images, discarded {:.3e}",
            st.images,
            st.discarded_weight
        );
        sums.push(attach_label(&sum, class, crate::LABEL_QUBITS)?);
        stats.push(st);
    }
    Ok((sums, stats))
}

/// Full pipeline: encode, batch-sum per class, label, and combine.
pub fn train_classifier(data: &Dataset, plan: &BuildPlan, exec: Execution) -> Result<MpoClassifier> {
    let (sums, _) = class_sum_states(data, plan, exec)?;
    combine_orthogonalise(&sums, plan.d_final, plan.orthogonalise)
}

/// Pipeline variant that labels every image before batching, mixing classes
/// inside batches. Class sums are not normalised individually.
pub fn train_classifier_mixed(data: &Dataset, plan: &BuildPlan, exec: Execution) -> Result<MpoClassifier> {
    let items: Vec<&AmplitudeVector> = data.items.iter().collect();
    let (sum, _) = batch_sum_by(&items, plan.batch_size, plan.d_batch, exec, |v| {
        attach_label(&encode(v, plan.d_encode)?, v.label, crate::LABEL_QUBITS)
    })?;
    let mut classes: Vec<usize> = data.items.iter().map(|v| v.label).collect();
    classes.sort_unstable();
    classes.dedup();
    let (mut mps, _) = compress(&sum, plan.d_final)?;
    mps.labels = classes.clone();
    let orthogonalised = if plan.orthogonalise {
        orthogonalise_reference(&mut mps, &classes)?
    } else {
        false
    };
    Ok(MpoClassifier {
        mps,
        class_count: data.class_count,
        label_qubits: crate::LABEL_QUBITS,
        d_final: plan.d_final,
        orthogonalised,
    })
}
