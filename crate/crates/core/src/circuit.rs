//! Circuit form of orthogonalised classifiers.
//!
//! Each tensor becomes one orthogonal block acting on a few wires. Applied in
//! order to `|0…0⟩` with the class bitstring written on the label wires,
//! the blocks prepare that class's state, wire `w` holding qubit `w`.
//!
//! A bond of extent `D` occupies `ceil(log2 D)` wires inside the span of
//! the subtree or chain segment it feeds, next to the cut; extents that are
//! not powers of two are zero-padded. The label wires are the last
//! `label_qubits` output wires of the centre or trunk block.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mps::MpoClassifier;
use crate::tensor::DenseTensor;
use crate::ttn::{Child, TtoClassifier};

/// Tolerance on the isometry condition of exported tensors.
const ISOMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitBlock {
    pub name: String,
    /// Ascending wires; the first is the most significant bit of the block
    /// index.
    pub targets: Vec<usize>,
    /// Row-major orthogonal matrix of size `2^targets.len()`.
    pub matrix: Vec<f64>,
}

impl CircuitBlock {
    pub fn qubits(&self) -> usize {
        self.targets.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitDescription {
    pub qubits: usize,
    pub label_wires: Vec<usize>,
    /// In application order.
    pub unitaries: Vec<CircuitBlock>,
}

/// Contiguous wires `[start, start + width)` holding an index below `dim`.
#[derive(Debug, Clone, Copy)]
struct Group {
    start: usize,
    width: usize,
    dim: usize,
}

impl Group {
    fn bond(start: usize, dim: usize) -> Self {
        Self {
            start,
            width: wires_for(dim),
            dim,
        }
    }

    /// Bond group ending just before wire `end`.
    fn bond_ending(end: usize, dim: usize) -> Self {
        let width = wires_for(dim);
        Self {
            start: end - width,
            width,
            dim,
        }
    }

    fn qubit(wire: usize) -> Self {
        Self {
            start: wire,
            width: 1,
            dim: 2,
        }
    }

    fn wires(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.width
    }
}

/// `ceil(log2 dim)`.
pub fn wires_for(dim: usize) -> usize {
    dim.next_power_of_two().trailing_zeros() as usize
}

/// Basis index over `wires` of the given group values.
fn place(wires: &[usize], groups: &[Group], values: &[usize]) -> usize {
    let mut idx = 0;
    for (g, &v) in groups.iter().zip(values) {
        for w in g.wires() {
            let bit = (v >> (g.start + g.width - 1 - w)) & 1;
            let pos = wires.binary_search(&w).expect("group wire belongs to the block");
            idx |= bit << (wires.len() - 1 - pos);
        }
    }
    idx
}

/// Orthogonal block sending input index `i` (other wires `|0⟩`) to column
/// `i` of `isometry`, whose rows run over the output groups row-major.
fn block(name: String, input: Group, outputs: &[Group], isometry: &DenseTensor) -> Result<CircuitBlock> {
    let err = linalg::column_orthonormality_error(isometry);
    if err > ISOMETRY_TOL {
        return Err(Error::NotOrthogonalised);
    }
    let mut wires: Vec<usize> = input.wires().chain(outputs.iter().flat_map(|g| g.wires())).collect();
    wires.sort_unstable();
    wires.dedup();
    let size = 1usize << wires.len();
    let din = input.dim;
    let mut m = DenseTensor::zeros(vec![size, din]);
    let dims: Vec<usize> = outputs.iter().map(|g| g.dim).collect();
    let mut values = vec![0usize; outputs.len()];
    for row in 0..isometry.rows() {
        let mut r = row;
        for k in (0..dims.len()).rev() {
            values[k] = r % dims[k];
            r /= dims[k];
        }
        let at = place(&wires, outputs, &values);
        for i in 0..din {
            m.set(&[at, i], isometry.get(&[row, i]));
        }
    }
    let q = linalg::complete_orthonormal(&m)?;
    let inputs: Vec<usize> = (0..din).map(|i| place(&wires, &[input], &[i])).collect();
    let mut is_input = vec![false; size];
    for &p in &inputs {
        is_input[p] = true;
    }
    let mut column_of = vec![0usize; size];
    for (i, &p) in inputs.iter().enumerate() {
        column_of[p] = i;
    }
    for (j, p) in (0..size).filter(|&p| !is_input[p]).enumerate() {
        column_of[p] = din + j;
    }
    let mut matrix = vec![0.0; size * size];
    for r in 0..size {
        for (c, &src) in column_of.iter().enumerate() {
            matrix[r * size + c] = q.get(&[r, src]);
        }
    }
    Ok(CircuitBlock {
        name,
        targets: wires,
        matrix,
    })
}

fn label_group(outputs: &[Group], label_qubits: usize, label_dim: usize) -> Result<Group> {
    let mut wires: Vec<usize> = outputs.iter().flat_map(|g| g.wires()).collect();
    wires.sort_unstable();
    if wires.len() < label_qubits {
        return Err(Error::Capacity {
            qubits: label_qubits,
            limit: wires.len(),
        });
    }
    let tail = &wires[wires.len() - label_qubits..];
    if tail.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::InvalidInput("label wires are not contiguous".into()));
    }
    Ok(Group {
        start: tail[0],
        width: label_qubits,
        dim: label_dim,
    })
}

/// Circuit for an orthogonalised MPO classifier: the centre block first,
/// then the left chain and the right chain outward from it.
pub fn export_mpo(c: &MpoClassifier) -> Result<CircuitDescription> {
    if !c.orthogonalised {
        return Err(Error::NotOrthogonalised);
    }
    let sites = c.mps.sites();
    let r = c.mps.reference_index().expect("classifier is labelled");
    let n = c.mps.qubit_count();
    let centre = &sites[r];
    let (da, dl, db) = (centre.shape()[0], centre.shape()[1], centre.shape()[2]);
    let outputs = [Group::bond_ending(r, da), Group::bond(r, db)];
    let label = label_group(&outputs, c.label_qubits, dl)?;
    let iso = centre.permute(&[0, 2, 1])?.reshape(vec![da * db, dl])?;
    let mut blocks = vec![block("centre".into(), label, &outputs, &iso)?];
    // left chain, site j is qubit j
    for j in (0..r).rev() {
        let s = &sites[j];
        let (l, rb) = (s.shape()[0], s.shape()[2]);
        let input = Group::bond_ending(j + 1, rb);
        let outs = [Group::bond_ending(j, l), Group::qubit(j)];
        let iso = s.clone().reshape(vec![l * 2, rb])?;
        blocks.push(block(format!("site {j}"), input, &outs, &iso)?);
    }
    // right chain, site s is qubit s - 1
    for (s, t) in sites.iter().enumerate().skip(r + 1) {
        let q = s - 1;
        let (l, rb) = (t.shape()[0], t.shape()[2]);
        let input = Group::bond(q, l);
        let outs = [Group::qubit(q), Group::bond(q + 1, rb)];
        let iso = t.clone().reshape(vec![l, 2 * rb])?.transpose();
        blocks.push(block(format!("site {q}"), input, &outs, &iso)?);
    }
    Ok(CircuitDescription {
        qubits: n,
        label_wires: label.wires().collect(),
        unitaries: blocks,
    })
}

/// Circuit for an orthogonalised TTO classifier: the trunk first, then
/// every node after its parent.
pub fn export_tto(c: &TtoClassifier) -> Result<CircuitDescription> {
    if !c.orthogonalised {
        return Err(Error::NotOrthogonalised);
    }
    let nodes = c.ttn.nodes();
    let root = nodes.len() - 1;
    // qubit span of every node; children precede parents
    let mut span = vec![(0usize, 0usize); nodes.len()];
    for (i, node) in nodes.iter().enumerate() {
        let ranges: Vec<(usize, usize)> = node
            .children
            .iter()
            .map(|ch| match *ch {
                Child::Qubit(q) => (q, q + 1),
                Child::Node(k) => span[k],
            })
            .collect();
        span[i] = (ranges[0].0, ranges[ranges.len() - 1].1);
    }
    let bond = |i: usize| Group::bond_ending(span[i].1, *nodes[i].tensor.shape().last().expect("parent axis"));
    let child_groups = |i: usize| -> Vec<Group> {
        nodes[i]
            .children
            .iter()
            .map(|ch| match *ch {
                Child::Qubit(q) => Group::qubit(q),
                Child::Node(k) => bond(k),
            })
            .collect()
    };
    let isometry = |i: usize| -> Result<DenseTensor> {
        let t = &nodes[i].tensor;
        let p = *t.shape().last().expect("parent axis");
        t.clone().reshape(vec![t.len() / p, p])
    };
    let outputs = child_groups(root);
    let label = label_group(&outputs, c.label_qubits, c.ttn.reference_dim())?;
    let mut blocks = vec![block("trunk".into(), label, &outputs, &isometry(root)?)?];
    for i in (0..root).rev() {
        blocks.push(block(format!("node {i}"), bond(i), &child_groups(i), &isometry(i)?)?);
    }
    Ok(CircuitDescription {
        qubits: c.ttn.qubit_count(),
        label_wires: label.wires().collect(),
        unitaries: blocks,
    })
}

impl CircuitDescription {
    pub fn largest_block(&self) -> usize {
        self.unitaries.iter().map(CircuitBlock::qubits).max().unwrap_or(0)
    }

    /// State prepared from the bitstring of `label` on the label wires.
    pub fn simulate(&self, label: usize) -> Result<Vec<f64>> {
        if self.qubits > crate::mps::DEFAULT_DENSE_LIMIT {
            return Err(Error::Capacity {
                qubits: self.qubits,
                limit: crate::mps::DEFAULT_DENSE_LIMIT,
            });
        }
        if label >> self.label_wires.len() != 0 {
            return Err(Error::LabelOverflow {
                class_id: label,
                label_qubits: self.label_wires.len(),
            });
        }
        let n = self.qubits;
        let mut state = vec![0.0; 1 << n];
        let mut start = 0;
        for (k, &w) in self.label_wires.iter().enumerate() {
            let bit = (label >> (self.label_wires.len() - 1 - k)) & 1;
            start |= bit << (n - 1 - w);
        }
        state[start] = 1.0;
        for b in &self.unitaries {
            apply(&mut state, n, b);
        }
        Ok(state)
    }
}

fn apply(state: &mut [f64], n: usize, b: &CircuitBlock) {
    let k = b.targets.len();
    let size = 1usize << k;
    let offsets: Vec<usize> = (0..size)
        .map(|j| {
            b.targets
                .iter()
                .enumerate()
                .map(|(p, &w)| ((j >> (k - 1 - p)) & 1) << (n - 1 - w))
                .sum()
        })
        .collect();
    let mask: usize = b.targets.iter().map(|&w| 1usize << (n - 1 - w)).sum();
    let mut sub = vec![0.0; size];
    for base in (0..state.len()).filter(|i| i & mask == 0) {
        for (s, &o) in sub.iter_mut().zip(&offsets) {
            *s = state[base | o];
        }
        for (r, &o) in offsets.iter().enumerate() {
            let row = &b.matrix[r * size..(r + 1) * size];
            state[base | o] = row.iter().zip(&sub).map(|(a, x)| a * x).sum();
        }
    }
}
