//! Tree tensor networks: encoding, block addition, compression, batched sum
//! states, and the orthogonalised TTO classifier.
//!
//! The tree is built from the qubits by pairing neighbouring items layer by
//! layer; an unpaired item at the end of a layer passes through unchanged.
//! Pairing stops once at most three items remain, and those become the
//! children of the trunk. For ten qubits this gives five two-qubit branches,
//! then two four-qubit branches plus the passed-through pair, so the trunk
//! has three downward legs covering 4, 4 and 2 qubits.
//!
//! Node tensors have axes `(child_1, …, child_r, parent)`. A qubit child has
//! extent 2. The trunk's parent axis is the reference leg: extent 1 for a
//! plain state, the label dimension once labelled.

use serde::{Deserialize, Serialize};

use crate::classifier::Readout;
use crate::dataset::{AmplitudeVector, Dataset};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{self, svd_truncate};
use crate::mps::{label_bitstring, BatchStats, BuildPlan};
use crate::tensor::{block_sum, contract, DenseTensor};

/// Eigenvalues below this fraction of the largest count as zero, the square
/// of the singular-value cutoff.
const EIGEN_CUTOFF: f64 = linalg::RANK_CUTOFF * linalg::RANK_CUTOFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Child {
    Qubit(usize),
    Node(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtnNode {
    pub children: Vec<Child>,
    pub tensor: DenseTensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ttn {
    qubit_count: usize,
    /// Children always precede their parent; the trunk is last.
    nodes: Vec<TtnNode>,
    labels: Vec<usize>,
}

/// Children lists of every node for an `n`-qubit tree, trunk last.
pub fn topology(n: usize) -> Vec<Vec<Child>> {
    assert!(n >= 1, "a tree needs at least one qubit");
    let mut nodes: Vec<Vec<Child>> = Vec::new();
    let mut items: Vec<Child> = (0..n).map(Child::Qubit).collect();
    while items.len() > 3 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        for pair in items.chunks(2) {
            if pair.len() == 2 {
                nodes.push(pair.to_vec());
                next.push(Child::Node(nodes.len() - 1));
            } else {
                next.push(pair[0]);
            }
        }
        items = next;
    }
    nodes.push(items);
    nodes
}

impl Ttn {
    pub fn from_nodes(qubit_count: usize, nodes: Vec<TtnNode>, labels: Vec<usize>) -> Result<Self> {
        let topo = topology(qubit_count);
        if topo.len() != nodes.len() || topo.iter().zip(&nodes).any(|(c, n)| c != &n.children) {
            return Err(Error::Shape("node layout does not match the tree topology".into()));
        }
        let t = Self {
            qubit_count,
            nodes,
            labels,
        };
        for (i, node) in t.nodes.iter().enumerate() {
            if node.tensor.rank() != node.children.len() + 1 {
                return Err(Error::Shape(format!("node {i} has rank {}", node.tensor.rank())));
            }
            for (k, c) in node.children.iter().enumerate() {
                let want = match c {
                    Child::Qubit(_) => 2,
                    Child::Node(j) => t.parent_dim(*j),
                };
                if node.tensor.shape()[k] != want {
                    return Err(Error::Shape(format!("node {i} child {k} extent mismatch")));
                }
            }
        }
        Ok(t)
    }

    pub fn qubit_count(&self) -> usize {
        self.qubit_count
    }

    pub fn nodes(&self) -> &[TtnNode] {
        &self.nodes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    fn parent_dim(&self, node: usize) -> usize {
        *self.nodes[node].tensor.shape().last().expect("node has a parent axis")
    }

    /// Extent of the trunk's reference leg.
    pub fn reference_dim(&self) -> usize {
        self.parent_dim(self.root())
    }

    /// Parent-bond extent of every non-trunk node.
    pub fn bond_dims(&self) -> Vec<usize> {
        (0..self.root()).map(|i| self.parent_dim(i)).collect()
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// `(parent of node, axis position in the parent)` for non-trunk nodes.
    fn parent_of(&self, node: usize) -> (usize, usize) {
        for (p, n) in self.nodes.iter().enumerate() {
            if let Some(k) = n.children.iter().position(|c| *c == Child::Node(node)) {
                return (p, k);
            }
        }
        unreachable!("non-trunk node {node} has a parent")
    }

    /// Dense `(2^span, parent)` matrix of the subtree under `node`.
    fn subtree_matrix(&self, node: usize) -> Result<DenseTensor> {
        let n = &self.nodes[node];
        let mut t = n.tensor.clone();
        let mut span = 0;
        for (k, c) in n.children.iter().enumerate() {
            match c {
                Child::Qubit(_) => span += 1,
                Child::Node(j) => {
                    let m = self.subtree_matrix(*j)?;
                    span += m.rows().trailing_zeros() as usize;
                    t = t.apply_on_axis(k, &m.transpose())?;
                }
            }
        }
        let p = *t.shape().last().expect("parent axis");
        t.reshape(vec![1 << span, p])
    }

    /// Dense amplitudes, one column per reference index, flattened as
    /// `(2^N, reference_dim)`.
    pub fn decode_all(&self) -> Result<DenseTensor> {
        if self.qubit_count > crate::mps::DEFAULT_DENSE_LIMIT {
            return Err(Error::Capacity {
                qubits: self.qubit_count,
                limit: crate::mps::DEFAULT_DENSE_LIMIT,
            });
        }
        self.subtree_matrix(self.root())
    }

    /// Dense amplitudes of an unlabelled tree.
    pub fn decode(&self) -> Result<Vec<f64>> {
        if self.reference_dim() != 1 {
            return Err(Error::InvalidInput(
                "labelled tree: select a label before decoding".into(),
            ));
        }
        Ok(self.decode_all()?.into_data())
    }

    /// Largest deviation of a non-trunk node from being an isometry from its
    /// children to its parent bond.
    pub fn isometry_error(&self) -> f64 {
        self.nodes[..self.root()]
            .iter()
            .map(|n| {
                let r = n.tensor.rank();
                linalg::column_orthonormality_error(&n.tensor.matricise(r - 1))
            })
            .fold(0.0, f64::max)
    }

    /// Gauges every non-trunk node into an isometry, moving all weight to
    /// the trunk. Exact.
    pub fn canonicalise(mut self) -> Result<Self> {
        for i in 0..self.root() {
            self.lift(i)?;
        }
        Ok(self)
    }

    /// Re-isometrises node `i` and pushes the remainder into its parent.
    fn lift(&mut self, i: usize) -> Result<()> {
        let t = &self.nodes[i].tensor;
        let r = t.rank();
        let mut shape = t.shape().to_vec();
        let svd = svd_truncate(&t.matricise(r - 1), usize::MAX)?;
        shape[r - 1] = svd.rank();
        self.nodes[i].tensor = svd.left.clone().reshape(shape)?;
        let carry = svd.right_scaled();
        let (p, k) = self.parent_of(i);
        self.nodes[p].tensor = self.nodes[p].tensor.apply_on_axis(k, &carry.transpose())?;
        Ok(())
    }

    /// Norm, read from the trunk of the canonical form.
    pub fn norm(&self) -> Result<f64> {
        Ok(self.clone().canonicalise()?.nodes.last().expect("trunk").tensor.norm())
    }

    /// Reduced density matrix on the parent bond of `node`, assuming every
    /// node off the trunk path is an isometry.
    fn bond_density(&self, node: usize) -> Result<DenseTensor> {
        let mut path = vec![node];
        while *path.last().expect("non-empty") != self.root() {
            path.push(self.parent_of(*path.last().expect("non-empty")).0);
        }
        let root = &self.nodes[self.root()].tensor;
        let mut rho = DenseTensor::identity(root.shape()[root.rank() - 1]);
        for w in path.windows(2).rev() {
            let (child, parent) = (w[0], w[1]);
            let k = self.nodes[parent]
                .children
                .iter()
                .position(|c| *c == Child::Node(child))
                .expect("child of parent");
            rho = child_density(&self.nodes[parent].tensor, &rho, k)?;
        }
        Ok(rho)
    }
}

/// `ρ_k[b, b'] = Σ T[…, b, …, p] ρ[p, p'] T[…, b', …, p']` with every other
/// child index summed.
fn child_density(t: &DenseTensor, rho: &DenseTensor, k: usize) -> Result<DenseTensor> {
    let r = t.rank();
    let tr = t.apply_on_axis(r - 1, rho)?;
    let others: Vec<(usize, usize)> = (0..r).filter(|&a| a != k).map(|a| (a, a)).collect();
    contract(t, &tr, &others)
}

/// Encodes a unit vector by pairwise SVD merges from the qubits upward,
/// truncating every bond to `d`.
pub fn encode(v: &AmplitudeVector, d: usize) -> Result<Ttn> {
    encode_amplitudes(&v.amplitudes, d)
}

pub fn encode_amplitudes(amplitudes: &[f64], d: usize) -> Result<Ttn> {
    if d == 0 {
        return Err(Error::InvalidInput("bond order must be at least 1".into()));
    }
    if !amplitudes.len().is_power_of_two() || amplitudes.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "amplitude count {} is not a power of two ≥ 2",
            amplitudes.len()
        )));
    }
    let n = amplitudes.len().trailing_zeros() as usize;
    let topo = topology(n);
    let mut x = DenseTensor::new(vec![2; n], amplitudes.to_vec())?;
    let mut axes: Vec<Child> = (0..n).map(Child::Qubit).collect();
    let mut nodes = Vec::with_capacity(topo.len());
    for (i, children) in topo.iter().enumerate() {
        if i + 1 == topo.len() {
            let mut shape = x.shape().to_vec();
            shape.push(1);
            nodes.push(TtnNode {
                children: children.clone(),
                tensor: x.reshape(shape)?,
            });
            break;
        }
        let pos = axes.iter().position(|a| *a == children[0]).expect("child axis");
        let (da, db) = (x.shape()[pos], x.shape()[pos + 1]);
        let r = x.rank();
        let mut perm = vec![pos, pos + 1];
        perm.extend((0..r).filter(|&a| a != pos && a != pos + 1));
        let rest: Vec<usize> = perm[2..].iter().map(|&a| x.shape()[a]).collect();
        let m = x.permute(&perm)?.reshape(vec![da * db, rest.iter().product()])?;
        let svd = svd_truncate(&m, d)?;
        let k = svd.rank();
        nodes.push(TtnNode {
            children: children.clone(),
            tensor: svd.left.clone().reshape(vec![da, db, k])?,
        });
        let mut shape = vec![k];
        shape.extend(&rest);
        let y = svd.right_scaled().reshape(shape)?;
        // move the new axis back to `pos`
        let mut back: Vec<usize> = (1..r - 1).collect();
        back.insert(pos, 0);
        x = y.permute(&back)?;
        axes.splice(pos..pos + 2, [Child::Node(i)]);
    }
    Ttn::from_nodes(n, nodes, Vec::new())
}

/// Exact direct sum: branch and trunk bonds are block-diagonal, qubit legs
/// and the reference leg are shared.
pub fn add_ttn(terms: &[Ttn]) -> Result<Ttn> {
    let first = terms.first().ok_or(Error::EmptyInput("add_ttn terms"))?;
    for t in terms {
        if t.qubit_count != first.qubit_count || t.reference_dim() != first.reference_dim() {
            return Err(Error::Shape("cannot add trees of different shape".into()));
        }
    }
    let root = first.root();
    let mut nodes = Vec::with_capacity(first.nodes.len());
    for (i, node) in first.nodes.iter().enumerate() {
        let mut direct: Vec<bool> = node.children.iter().map(|c| matches!(c, Child::Node(_))).collect();
        direct.push(i != root);
        let parts: Vec<&DenseTensor> = terms.iter().map(|t| &t.nodes[i].tensor).collect();
        nodes.push(TtnNode {
            children: node.children.clone(),
            tensor: block_sum(&parts, &direct)?,
        });
    }
    let mut labels: Vec<usize> = Vec::new();
    for l in terms.iter().flat_map(|t| &t.labels) {
        if !labels.contains(l) {
            labels.push(*l);
        }
    }
    Ttn::from_nodes(first.qubit_count, nodes, labels)
}

/// Truncates every branch bond to at most `d`, leaves to trunk. Each bond is
/// projected onto the dominant eigenvectors of its reduced density matrix
/// and the tree is re-gauged before the next bond. Returns the compressed
/// tree and the discarded weight, which equals `‖ψ − ψ̃‖²`.
pub fn compress(t: &Ttn, d: usize) -> Result<(Ttn, f64)> {
    if d == 0 {
        return Err(Error::InvalidInput("bond order must be at least 1".into()));
    }
    let mut t = t.clone().canonicalise()?;
    let mut discarded = 0.0;
    for i in 0..t.root() {
        let rho = t.bond_density(i)?;
        let (vals, vecs) = linalg::symmetric_eigen(&rho)?;
        let top = vals[0].max(0.0);
        let rank = vals.iter().take_while(|&&v| v > EIGEN_CUTOFF * top).count();
        let keep = rank.min(d).max(1);
        discarded += vals[keep..].iter().map(|v| v.max(0.0)).sum::<f64>();
        let p = DenseTensor::from_fn(vec![vecs.rows(), keep], |ix| vecs.get(&[ix[0], ix[1]]));
        let r = t.nodes[i].tensor.rank();
        t.nodes[i].tensor = t.nodes[i].tensor.apply_on_axis(r - 1, &p)?;
        let (parent, k) = t.parent_of(i);
        t.nodes[parent].tensor = t.nodes[parent].tensor.apply_on_axis(k, &p)?;
        // restore isometry along the path to the trunk
        let mut cur = parent;
        while cur != t.root() {
            t.lift(cur)?;
            cur = t.parent_of(cur).0;
        }
    }
    Ok((t, discarded))
}

/// Batched sum over items converted by `encode`, mirroring
/// [`mps::batch_sum_by`](crate::mps::batch_sum_by).
pub fn batch_sum_by<T, F>(
    items: &[T],
    batch_size: usize,
    d_batch: usize,
    exec: Execution,
    encode: F,
) -> Result<(Ttn, BatchStats)>
where
    T: Sync,
    F: Fn(&T) -> Result<Ttn> + Sync + Send,
{
    if items.is_empty() {
        return Err(Error::EmptyInput("batch_sum images"));
    }
    if batch_size < 2 {
        return Err(Error::InvalidInput("batch_size must be at least 2".into()));
    }
    let chunks: Vec<&[T]> = items.chunks(batch_size).collect();
    let sums = exec.try_map(&chunks, |chunk| -> Result<(Ttn, f64)> {
        let states = chunk.iter().map(&encode).collect::<Result<Vec<_>>>()?;
        compress(&add_ttn(&states)?, d_batch)
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
        let (next, w2) = compress(&add_ttn(&[acc, batch])?, d_batch)?;
        stats.discarded_weight += w + w2;
        acc = next;
    }
    Ok((acc, stats))
}

pub fn batch_sum(images: &[Ttn], batch_size: usize, d_batch: usize) -> Result<Ttn> {
    batch_sum_by(images, batch_size, d_batch, Execution::Sequential, |t| Ok(t.clone())).map(|r| r.0)
}

/// Widens the trunk's reference leg to `2^label_qubits` with the state on
/// label `class_id`.
pub fn attach_label(sum_state: &Ttn, class_id: usize, label_qubits: usize) -> Result<Ttn> {
    let b = label_bitstring(class_id, label_qubits)?;
    if sum_state.reference_dim() != 1 {
        return Err(Error::InvalidInput("tree is already labelled".into()));
    }
    let mut t = sum_state.clone().canonicalise()?;
    let root = t.root();
    let trunk = &t.nodes[root].tensor;
    let r = trunk.rank();
    let mut shape = trunk.shape().to_vec();
    shape[r - 1] = 1 << label_qubits;
    let dim = shape[r - 1];
    let mut out = DenseTensor::zeros(shape);
    for (i, v) in trunk.data().iter().enumerate() {
        out.data_mut()[i * dim + b] = *v;
    }
    t.nodes[root].tensor = out;
    t.labels = vec![class_id];
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtoClassifier {
    pub ttn: Ttn,
    pub class_count: usize,
    pub label_qubits: usize,
    pub d_final: usize,
    pub orthogonalised: bool,
}

/// Normalises, block-sums and compresses one labelled tree per class, then
/// (when `orthogonalise` is set) replaces the trunk's label columns by their
/// polar factor.
pub fn combine_orthogonalise(labelled_sums: &[Ttn], d_final: usize, orthogonalise: bool) -> Result<TtoClassifier> {
    let first = labelled_sums.first().ok_or(Error::EmptyInput("labelled sums"))?;
    let dim = first.reference_dim();
    let mut classes: Vec<usize> = Vec::new();
    let mut normalised = Vec::with_capacity(labelled_sums.len());
    for s in labelled_sums {
        for &l in &s.labels {
            if classes.contains(&l) {
                return Err(Error::LabelCollision(l));
            }
            classes.push(l);
        }
        let mut c = s.clone().canonicalise()?;
        let root = c.root();
        let norm = c.nodes[root].tensor.norm();
        if norm == 0.0 {
            return Err(Error::ZeroNorm);
        }
        c.nodes[root].tensor.scale(1.0 / norm);
        normalised.push(c);
    }
    let (mut ttn, _) = compress(&add_ttn(&normalised)?, d_final)?;
    ttn.labels = classes.clone();
    let mut orthogonalised = false;
    if orthogonalise {
        let root = ttn.root();
        let trunk = &ttn.nodes[root].tensor;
        let r = trunk.rank();
        let shape = trunk.shape().to_vec();
        let (m, iso) = linalg::orthogonalise_label_columns(&trunk.matricise(r - 1), &classes)?;
        ttn.nodes[root].tensor = m.reshape(shape)?;
        orthogonalised = iso;
    }
    Ok(TtoClassifier {
        ttn,
        class_count: classes.iter().max().map_or(0, |m| m + 1),
        label_qubits: dim.trailing_zeros() as usize,
        d_final,
        orthogonalised,
    })
}

impl TtoClassifier {
    pub fn qubit_count(&self) -> usize {
        self.ttn.qubit_count
    }

    /// Dense class state generated from reference label `b`.
    pub fn class_state(&self, b: usize) -> Result<Vec<f64>> {
        let all = self.ttn.decode_all()?;
        Ok((0..all.rows()).map(|i| all.get(&[i, b])).collect())
    }

    pub fn readout(&self) -> Result<Readout> {
        let root = self.ttn.root();
        let trunk = &self.ttn.nodes[root];
        let legs = trunk
            .children
            .iter()
            .map(|c| match c {
                Child::Qubit(_) => Ok(DenseTensor::identity(2)),
                Child::Node(j) => self.ttn.subtree_matrix(*j),
            })
            .collect::<Result<Vec<_>>>()?;
        Readout::new(legs, trunk.tensor.clone(), self.class_count, self.orthogonalised)
    }
}

/// Per-class labelled sum trees, in class order.
pub fn class_sum_states(data: &Dataset, plan: &BuildPlan, exec: Execution) -> Result<(Vec<Ttn>, Vec<BatchStats>)> {
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
        sums.push(attach_label(&sum, class, crate::LABEL_QUBITS)?);
        stats.push(st);
    }
    Ok((sums, stats))
}

pub fn train_classifier(data: &Dataset, plan: &BuildPlan, exec: Execution) -> Result<TtoClassifier> {
    let (sums, _) = class_sum_states(data, plan, exec)?;
    combine_orthogonalise(&sums, plan.d_final, plan.orthogonalise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let v: Vec<f64> = (0..1 << n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn ten_qubit_layout() {
        let topo = topology(10);
        assert_eq!(topo.len(), 8);
        assert_eq!(topo[7], vec![Child::Node(5), Child::Node(6), Child::Node(4)]);
        assert_eq!(topo[4], vec![Child::Qubit(8), Child::Qubit(9)]);
        assert_eq!(
            topology(3),
            vec![vec![Child::Qubit(0), Child::Qubit(1), Child::Qubit(2)]]
        );
    }

    #[test]
    fn exact_encoding_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=10 {
            let v = random_unit(n, &mut rng);
            let t = encode_amplitudes(&v, 16).unwrap();
            assert!(max_diff(&t.decode().unwrap(), &v) < 1e-12, "n = {n}");
            assert!(t.isometry_error() < 1e-10);
        }
    }

    #[test]
    fn ten_qubit_bonds_cap_at_sixteen() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = encode_amplitudes(&random_unit(10, &mut rng), 64).unwrap();
        assert_eq!(t.bond_dims(), vec![4, 4, 4, 4, 4, 16, 16]);
    }

    #[test]
    fn product_state_has_unit_bonds() {
        let mut v = vec![0.0; 16];
        v[5] = 1.0;
        let t = encode_amplitudes(&v, 16).unwrap();
        assert!(t.bond_dims().iter().all(|&d| d == 1));
    }

    #[test]
    fn addition_and_label() {
        let mut a = vec![0.0; 16];
        a[0] = 1.0;
        let mut b = vec![0.0; 16];
        b[15] = 1.0;
        let s = add_ttn(&[encode_amplitudes(&a, 4).unwrap(), encode_amplitudes(&b, 4).unwrap()]).unwrap();
        let d = s.decode().unwrap();
        assert_eq!(d[0], 1.0);
        assert_eq!(d[15], 1.0);
        let l = attach_label(&s, 9, 4).unwrap();
        let all = l.decode_all().unwrap();
        assert_eq!(all.shape(), &[16, 16]);
        assert!((all.get(&[15, 9]) - 1.0).abs() < 1e-12);
        assert_eq!(all.get(&[15, 0]), 0.0);
    }

    #[test]
    fn compression_bookkeeping_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let terms: Vec<Ttn> = (0..5)
            .map(|_| encode_amplitudes(&random_unit(8, &mut rng), 16).unwrap())
            .collect();
        let s = add_ttn(&terms).unwrap();
        let exact = s.decode().unwrap();
        for d in [1, 2, 3, 5, 8] {
            let (c, w) = compress(&s, d).unwrap();
            assert!(c.max_bond() <= d);
            assert!(c.isometry_error() < 1e-10);
            let approx = c.decode().unwrap();
            let err: f64 = exact.iter().zip(&approx).map(|(x, y)| (x - y) * (x - y)).sum();
            assert!((err - w).abs() < 1e-10, "d = {d}: {err} vs {w}");
        }
    }
}
