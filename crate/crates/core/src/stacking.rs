//! Refinement of classifier outputs: classical dense-layer stacking,
//! deterministic stacking unitaries on several copies of the label state,
//! hierarchical and tensor-network variants, and confusion diagnostics.
//!
//! Stacked class probabilities for `M` copies are
//! `p_l = Σ_a w[a·16 + l]²` with `w = V · φ^{⊗M}`: the label is the last,
//! fastest-varying copy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{argmax, Readout};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg;
use crate::mps::{self, BuildPlan, MpoClassifier, Mps};
use crate::tensor::DenseTensor;
use crate::LABEL_DIM;

/// Largest copy count for a dense stacking unitary (`16³ = 4096`).
pub const MAX_DENSE_COPIES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelState {
    /// Unit-norm label-register amplitudes.
    pub amplitudes: Vec<f64>,
    pub label: usize,
    /// Norm of the projection before normalisation.
    pub norm_before: f64,
}

impl LabelState {
    pub fn new(raw: Vec<f64>, label: usize) -> Result<Self> {
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateProjection);
        }
        Ok(Self {
            amplitudes: raw.into_iter().map(|x| x / norm).collect(),
            label,
            norm_before: norm,
        })
    }

    /// Squared amplitudes.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a * a).collect()
    }
}

/// Projects an image onto the label register with all padding qubits in
/// `|0⟩` and normalises the result.
pub fn project_label(readout: &Readout, image: &[f64], label: usize) -> Result<LabelState> {
    if !readout.is_isometric() {
        return Err(Error::NotOrthogonalised);
    }
    LabelState::new(readout.project(image)?, label)
}

pub fn project_dataset(readout: &Readout, data: &Dataset, exec: Execution) -> Result<Vec<LabelState>> {
    exec.try_map(&data.items, |v| project_label(readout, &v.amplitudes, v.label))
}

/// Share of states whose largest class amplitude is the true label.
pub fn raw_accuracy(states: &[LabelState], class_count: usize) -> f64 {
    accuracy(states, |s| argmax(&s.probabilities()[..class_count]))
}

fn accuracy(states: &[LabelState], predict: impl Fn(&LabelState) -> usize) -> f64 {
    if states.is_empty() {
        return 0.0;
    }
    let correct = states.iter().filter(|s| predict(s) == s.label).count();
    100.0 * correct as f64 / states.len() as f64
}

// ---------------------------------------------------------------------------
// classical stacking

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `inputs × outputs`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub inputs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenseTraining {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Log loss and accuracy every this many epochs; 0 disables.
    pub log_every: usize,
}

impl Default for DenseTraining {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 10_000,
            log_every: 1000,
        }
    }
}

impl DenseLayer {
    pub fn outputs(&self) -> usize {
        self.biases.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let k = self.outputs();
        let mut z = self.biases.clone();
        for (xi, row) in x.iter().zip(self.weights.chunks_exact(k)) {
            for (zj, w) in z.iter_mut().zip(row) {
                *zj += xi * w;
            }
        }
        z
    }

    /// Sigmoid outputs.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.logits(x).into_iter().map(sigmoid).collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Mean binary cross-entropy of sigmoid outputs against one-hot targets.
pub fn dense_loss(layer: &DenseLayer, samples: &[(Vec<f64>, usize)]) -> f64 {
    let mut total = 0.0;
    for (x, y) in samples {
        for (j, z) in layer.logits(x).into_iter().enumerate() {
            // log σ(z) = −softplus(−z), log(1 − σ(z)) = −softplus(z)
            total += if j == *y { softplus(-z) } else { softplus(z) };
        }
    }
    total / samples.len() as f64
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// Full-batch gradient descent from zero weights on a single sigmoid layer
/// with cross-entropy loss.
pub fn train_dense(samples: &[(Vec<f64>, usize)], outputs: usize, cfg: &DenseTraining) -> Result<DenseLayer> {
    let first = samples.first().ok_or(Error::EmptyInput("dense training set"))?;
    let inputs = first.0.len();
    if let Some((x, y)) = samples.iter().find(|(x, y)| x.len() != inputs || *y >= outputs) {
        return Err(Error::InvalidInput(format!(
            "sample of width {} with label {y} does not fit {inputs} inputs and {outputs} outputs",
            x.len()
        )));
    }
    // inputs augmented with a constant column; the last parameter row is
    // the bias
    let width = inputs + 1;
    let n = samples.len();
    let mut xa = Vec::with_capacity(n * width);
    for (x, _) in samples {
        xa.extend_from_slice(x);
        xa.push(1.0);
    }
    let mut theta = vec![0.0; width * outputs];
    let mut grad = vec![0.0; width * outputs];
    let mut g = vec![0.0; outputs];
    let step = cfg.learning_rate / n as f64;
    for epoch in 0..cfg.epochs {
        grad.fill(0.0);
        for (row, (_, y)) in xa.chunks_exact(width).zip(samples) {
            g.fill(0.0);
            for (&xi, th) in row.iter().zip(theta.chunks_exact(outputs)) {
                for (gj, t) in g.iter_mut().zip(th) {
                    *gj += xi * t;
                }
            }
            for (j, gj) in g.iter_mut().enumerate() {
                *gj = sigmoid(*gj) - if j == *y { 1.0 } else { 0.0 };
            }
            for (&xi, gr) in row.iter().zip(grad.chunks_exact_mut(outputs)) {
                for (a, gj) in gr.iter_mut().zip(&g) {
                    *a += xi * gj;
                }
            }
        }
        for (p, d) in theta.iter_mut().zip(&grad) {
            *p -= step * d;
        }
        if cfg.log_every > 0 && (epoch + 1) % cfg.log_every == 0 {
            let layer = unpack(&theta, inputs, outputs);
            let acc = samples.iter().filter(|(x, y)| layer.predict(x) == *y).count() as f64 / n as f64;
            log::info!(
                "epoch {}: loss {:.5}, accuracy {:.2}%",
                epoch + 1,
                dense_loss(&layer, samples),
                100.0 * acc
            );
        }
    }
    Ok(unpack(&theta, inputs, outputs))
}

fn unpack(d: &[f64], inputs: usize, outputs: usize) -> DenseLayer {
    DenseLayer {
        weights: d[..inputs * outputs].to_vec(),
        biases: d[inputs * outputs..].to_vec(),
        inputs,
    }
}

/// Squared label amplitudes paired with labels, the classical stacking input.
pub fn dense_samples(states: &[LabelState]) -> Vec<(Vec<f64>, usize)> {
    states.iter().map(|s| (s.probabilities(), s.label)).collect()
}

pub fn dense_accuracy(layer: &DenseLayer, states: &[LabelState]) -> f64 {
    accuracy(states, |s| layer.predict(&s.probabilities()))
}

// ---------------------------------------------------------------------------
// symmetric subspace of M copies

/// Orthonormal basis of the symmetric subspace of `(R^dim)^{⊗copies}`.
/// Basis vector `m` is the normalised sum over the distinct orderings of
/// the non-decreasing index tuple `tuples[m]`.
#[derive(Debug, Clone)]
struct SymBasis {
    tuples: Vec<Vec<usize>>,
    /// `sqrt(number of distinct orderings)` per tuple.
    weights: Vec<f64>,
    /// Basis index of every full product index.
    index_of: Vec<usize>,
}

impl SymBasis {
    fn new(dim: usize, copies: usize) -> Self {
        let mut tuples = Vec::new();
        let mut cur = vec![0usize; copies];
        loop {
            tuples.push(cur.clone());
            // next non-decreasing tuple
            let mut k = copies;
            while k > 0 && cur[k - 1] == dim - 1 {
                k -= 1;
            }
            if k == 0 {
                break;
            }
            let v = cur[k - 1] + 1;
            for x in &mut cur[k - 1..] {
                *x = v;
            }
        }
        let fact = |n: usize| (1..=n).product::<usize>() as f64;
        let weights = tuples
            .iter()
            .map(|t| {
                let mut denom = 1.0;
                let mut i = 0;
                while i < t.len() {
                    let j = (i..t.len()).find(|&j| t[j] != t[i]).unwrap_or(t.len());
                    denom *= fact(j - i);
                    i = j;
                }
                (fact(copies) / denom).sqrt()
            })
            .collect();
        let total = dim.pow(copies as u32);
        let mut index_of = vec![0; total];
        for (flat, slot) in index_of.iter_mut().enumerate() {
            let mut digits: Vec<usize> = (0..copies)
                .map(|k| flat / dim.pow((copies - 1 - k) as u32) % dim)
                .collect();
            digits.sort_unstable();
            *slot = tuples.binary_search(&digits).expect("sorted tuple is enumerated");
        }
        Self {
            tuples,
            weights,
            index_of,
        }
    }

    fn len(&self) -> usize {
        self.tuples.len()
    }

    /// Coordinates of `φ^{⊗copies}` in this basis.
    fn coordinates(&self, phi: &[f64]) -> Vec<f64> {
        self.tuples
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| w * t.iter().map(|&i| phi[i]).product::<f64>())
            .collect()
    }

    /// Full-space vector of basis coordinates `c`.
    fn expand(&self, c: &[f64]) -> Vec<f64> {
        self.index_of.iter().map(|&m| c[m] / self.weights[m]).collect()
    }
}

/// `φ^{⊗copies}` as a dense vector.
pub fn tensor_power(phi: &[f64], copies: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    for _ in 0..copies {
        out = out.iter().flat_map(|a| phi.iter().map(move |b| a * b)).collect();
    }
    out
}

// ---------------------------------------------------------------------------
// dense stacking unitary

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackingUnitary {
    pub copies: usize,
    /// Orthogonal, `16^copies` square.
    pub matrix: DenseTensor,
}

/// Deterministic stacking unitary for `copies` uploads of the label state.
///
/// For each class the equal-weight sum of `(|φ⟩⟨φ|)^{⊗M}` over its training
/// states is eigendecomposed; the `16^{M−1}` dominant eigenvectors scaled by
/// `√λ` become that class's block of rows (row `a·16 + l`). Unused labels
/// get zero rows, and the assembled matrix is replaced by its polar factor.
pub fn init_stack_unitary(train: &[LabelState], copies: usize, class_count: usize) -> Result<StackingUnitary> {
    if copies == 0 {
        return Err(Error::InvalidInput("at least one copy is required".into()));
    }
    if copies > MAX_DENSE_COPIES {
        return Err(Error::Capacity {
            qubits: copies * crate::LABEL_QUBITS,
            limit: MAX_DENSE_COPIES * crate::LABEL_QUBITS,
        });
    }
    let dim = train
        .first()
        .ok_or(Error::EmptyInput("stacking training set"))?
        .amplitudes
        .len();
    let basis = SymBasis::new(dim, copies);
    let full = dim.pow(copies as u32);
    let block = full / dim;
    let mut v = DenseTensor::zeros(vec![full, full]);
    for class in 0..class_count {
        let members: Vec<&LabelState> = train.iter().filter(|s| s.label == class).collect();
        if members.is_empty() {
            return Err(Error::MissingClass(class));
        }
        let mut coords = Vec::with_capacity(members.len() * basis.len());
        for s in &members {
            coords.extend(basis.coordinates(&s.amplitudes));
        }
        let c = DenseTensor::matrix(members.len(), basis.len(), coords)?;
        let gram = linalg::matmul_tn(&c, &c);
        let (vals, vecs) = linalg::symmetric_eigen(&gram)?;
        for (a, &val) in vals.iter().enumerate().take(block.min(basis.len())) {
            let lambda = val.max(0.0);
            if lambda == 0.0 {
                break;
            }
            let w: Vec<f64> = (0..basis.len()).map(|i| vecs.get(&[i, a])).collect();
            let row = basis.expand(&w);
            let r = a * dim + class;
            let scale = lambda.sqrt();
            for (j, x) in row.into_iter().enumerate() {
                v.set(&[r, j], scale * x);
            }
        }
    }
    Ok(StackingUnitary {
        copies,
        matrix: linalg::polar_unitary(&v)?,
    })
}

impl StackingUnitary {
    pub fn identity(copies: usize) -> Self {
        Self {
            copies,
            matrix: DenseTensor::identity(LABEL_DIM.pow(copies as u32)),
        }
    }

    fn label_dim(&self) -> usize {
        let n = self.matrix.rows();
        // n = dim^copies
        (1..=n)
            .find(|d| d.pow(self.copies as u32) == n)
            .expect("square of a power")
    }

    /// Class probabilities for every label of the last copy.
    pub fn class_probabilities(&self, phi: &[f64]) -> Vec<f64> {
        let w = linalg::matvec(&self.matrix, &tensor_power(phi, self.copies));
        group_probabilities(&w, phi.len())
    }

    pub fn classify(&self, phi: &[f64], class_count: usize) -> usize {
        argmax(&self.class_probabilities(phi)[..class_count])
    }

    /// Probabilities for many states through the symmetric subspace, in
    /// blocks of matrix products.
    pub fn class_probabilities_batch(&self, states: &[LabelState], exec: Execution) -> Vec<Vec<f64>> {
        let dim = self.label_dim();
        let basis = SymBasis::new(dim, self.copies);
        // reduced[i, m] = Σ over orderings of tuple m of V[i, idx] / weight
        let full = self.matrix.rows();
        let mut reduced = DenseTensor::zeros(vec![full, basis.len()]);
        for (idx, &m) in basis.index_of.iter().enumerate() {
            let inv = 1.0 / basis.weights[m];
            for i in 0..full {
                let x = self.matrix.get(&[i, idx]);
                let cur = reduced.get(&[i, m]);
                reduced.set(&[i, m], cur + x * inv);
            }
        }
        let reduced_t = reduced.transpose();
        let chunks: Vec<&[LabelState]> = states.chunks(512).collect();
        exec.map(&chunks, |chunk| {
            let mut coords = Vec::with_capacity(chunk.len() * basis.len());
            for s in *chunk {
                coords.extend(basis.coordinates(&s.amplitudes));
            }
            let c = DenseTensor::matrix(chunk.len(), basis.len(), coords).expect("consistent shape");
            let w = linalg::matmul(&c, &reduced_t);
            w.data()
                .chunks_exact(full)
                .map(|row| group_probabilities(row, dim))
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect()
    }

    pub fn accuracy(&self, states: &[LabelState], class_count: usize, exec: Execution) -> f64 {
        let probs = self.class_probabilities_batch(states, exec);
        let correct = states
            .iter()
            .zip(&probs)
            .filter(|(s, p)| argmax(&p[..class_count]) == s.label)
            .count();
        100.0 * correct as f64 / states.len().max(1) as f64
    }
}

/// `p_l = Σ_a w[a·dim + l]²`.
fn group_probabilities(w: &[f64], dim: usize) -> Vec<f64> {
    let mut p = vec![0.0; dim];
    for chunk in w.chunks_exact(dim) {
        for (pl, x) in p.iter_mut().zip(chunk) {
            *pl += x * x;
        }
    }
    p
}

/// Shorthand for [`StackingUnitary::classify`].
pub fn classify_stacked(v: &StackingUnitary, phi: &LabelState, class_count: usize) -> usize {
    v.classify(&phi.amplitudes, class_count)
}

// ---------------------------------------------------------------------------
// hierarchical stacking

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalStack {
    pub copies_per_layer: usize,
    pub layers: Vec<StackingUnitary>,
}

/// Input state for the next layer: `o_l = √p_l`, normalised.
fn layer_output(probs: &[f64], label: usize) -> Result<LabelState> {
    LabelState::new(probs.iter().map(|p| p.max(0.0).sqrt()).collect(), label)
}

/// Builds `layers` stacking unitaries, each trained on the outputs of the
/// previous one.
pub fn hierarchical_stack(
    train: &[LabelState],
    copies_per_layer: usize,
    layers: usize,
    class_count: usize,
    exec: Execution,
) -> Result<HierarchicalStack> {
    let mut states = train.to_vec();
    let mut out = Vec::with_capacity(layers);
    for _ in 0..layers {
        let v = init_stack_unitary(&states, copies_per_layer, class_count)?;
        states = advance(&v, &states, exec)?;
        out.push(v);
    }
    Ok(HierarchicalStack {
        copies_per_layer,
        layers: out,
    })
}

fn advance(v: &StackingUnitary, states: &[LabelState], exec: Execution) -> Result<Vec<LabelState>> {
    let probs = v.class_probabilities_batch(states, exec);
    states
        .iter()
        .zip(&probs)
        .map(|(s, p)| layer_output(p, s.label))
        .collect()
}

impl HierarchicalStack {
    /// Accuracy after each layer; entry 0 is the unstacked accuracy.
    pub fn layer_accuracies(&self, states: &[LabelState], class_count: usize, exec: Execution) -> Result<Vec<f64>> {
        let mut acc = vec![raw_accuracy(states, class_count)];
        let mut cur = states.to_vec();
        for v in &self.layers {
            acc.push(v.accuracy(&cur, class_count, exec));
            cur = advance(v, &cur, exec)?;
        }
        Ok(acc)
    }

    /// Class probabilities after the last layer. With no layers these are
    /// the squared amplitudes of `phi`.
    pub fn class_probabilities(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let mut cur = LabelState::new(phi.to_vec(), 0)?;
        let mut p = cur.probabilities();
        for (i, v) in self.layers.iter().enumerate() {
            p = v.class_probabilities(&cur.amplitudes);
            if i + 1 < self.layers.len() {
                cur = layer_output(&p, 0)?;
            }
        }
        Ok(p)
    }
}

// ---------------------------------------------------------------------------
// tensor-network stacking

/// `φ^{⊗copies}` as a product of exact four-qubit blocks, compressed to
/// `d_encode`.
pub fn encode_copies(phi: &[f64], copies: usize, d_encode: usize) -> Result<Mps> {
    let block = mps::encode_amplitudes(phi, phi.len())?.absorb_centre();
    let mut sites = Vec::new();
    for _ in 0..copies {
        sites.extend(block.sites().iter().cloned());
    }
    let chain = Mps::from_sites(sites, mps::Centre::Unknown, None, Vec::new())?;
    Ok(mps::compress(&chain, d_encode)?.0)
}

/// MPO stacking classifier over `4·copies` qubits built from the copied
/// label states exactly like the image classifier.
pub fn tn_stack(
    train: &[LabelState],
    copies: usize,
    plan: &BuildPlan,
    class_count: usize,
    exec: Execution,
) -> Result<MpoClassifier> {
    if copies == 0 {
        return Err(Error::InvalidInput("at least one copy is required".into()));
    }
    let mut sums = Vec::with_capacity(class_count);
    for class in 0..class_count {
        let members: Vec<&LabelState> = train.iter().filter(|s| s.label == class).collect();
        if members.is_empty() {
            return Err(Error::MissingClass(class));
        }
        let (sum, _) = mps::batch_sum_by(&members, plan.batch_size, plan.d_batch, exec, |s| {
            encode_copies(&s.amplitudes, copies, plan.d_encode)
        })?;
        sums.push(mps::attach_label(&sum, class, crate::LABEL_QUBITS)?);
    }
    mps::combine_orthogonalise(&sums, plan.d_final, plan.orthogonalise)
}

/// Accuracy of an MPO stacker on label states, scoring `φ^{⊗copies}`
/// densely in post-selection mode.
pub fn tn_stack_accuracy(stacker: &Readout, states: &[LabelState], copies: usize, exec: Execution) -> Result<f64> {
    let k = stacker.class_count();
    let hits = exec.try_map(states, |s| -> Result<bool> {
        let p = stacker.project(&tensor_power(&s.amplitudes, copies))?;
        let scores: Vec<f64> = p.iter().map(|a| a * a).collect();
        Ok(argmax(&scores[..k]) == s.label)
    })?;
    Ok(100.0 * hits.iter().filter(|&&h| h).count() as f64 / states.len().max(1) as f64)
}

// ---------------------------------------------------------------------------
// confusion diagnostics

/// `C_ij` = stacked probability of label `j` for the proxy state of class
/// `i`. `probabilities` maps a unit label state to its 16 class
/// probabilities.
pub fn confusion(proxies: &[Vec<f64>], class_count: usize, probabilities: impl Fn(&[f64]) -> Vec<f64>) -> DenseTensor {
    let mut c = DenseTensor::zeros(vec![proxies.len(), class_count]);
    for (i, sigma) in proxies.iter().enumerate() {
        for (j, p) in probabilities(sigma).into_iter().take(class_count).enumerate() {
            c.set(&[i, j], p);
        }
    }
    c
}

/// Normalised label-space images `⟨0|U|Σ_i⟩` of per-class mean states,
/// used as class proxies.
pub fn class_proxies(readout: &Readout, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    let dim = 1usize << data.qubit_count;
    let mut out = Vec::with_capacity(data.class_count);
    for class in 0..data.class_count {
        let mut sum = vec![0.0; dim];
        let members = data.class_items(class);
        if members.is_empty() {
            return Err(Error::MissingClass(class));
        }
        for v in members {
            for (s, a) in sum.iter_mut().zip(&v.amplitudes) {
                *s += a;
            }
        }
        out.push(LabelState::new(readout.project(&sum)?, class)?.amplitudes);
    }
    Ok(out)
}

/// Target for [`permute_confusion`]: `W_ij = 1 / (1 + |i − j|)`.
pub fn diagonal_weight(n: usize) -> DenseTensor {
    DenseTensor::from_fn(vec![n, n], |ix| 1.0 / (1.0 + ix[0].abs_diff(ix[1]) as f64))
}

fn permuted_rows(c: &DenseTensor, perm: &[usize]) -> DenseTensor {
    DenseTensor::from_fn(c.shape().to_vec(), |ix| c.get(&[perm[ix[0]], ix[1]]))
}

/// Frobenius distance between `C` with rows reordered by `perm` and the
/// diagonal weight matrix.
pub fn permutation_cost(c: &DenseTensor, perm: &[usize]) -> f64 {
    permuted_rows(c, perm).frobenius_distance(&diagonal_weight(c.rows()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutedConfusion {
    /// Row `a` of the result is row `permutation[a]` of the input.
    pub permutation: Vec<usize>,
    pub matrix: DenseTensor,
    pub cost: f64,
}

/// Reorders the rows of a square confusion matrix towards the most diagonal
/// form by greedy pairwise swaps, starting once from the identity and
/// `restarts − 1` times from seeded random orderings.
pub fn permute_confusion(c: &DenseTensor, restarts: usize, seed: u64) -> Result<PermutedConfusion> {
    if c.rank() != 2 || c.rows() != c.cols() {
        return Err(Error::Shape("confusion matrix must be square".into()));
    }
    let n = c.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Vec<usize> = (0..n).collect();
    let mut best_cost = f64::INFINITY;
    for r in 0..restarts.max(1) {
        let mut perm: Vec<usize> = (0..n).collect();
        if r > 0 {
            perm.shuffle(&mut rng);
        }
        let mut cost = permutation_cost(c, &perm);
        loop {
            let mut step: Option<(usize, usize, f64)> = None;
            for i in 0..n {
                for j in i + 1..n {
                    perm.swap(i, j);
                    let trial = permutation_cost(c, &perm);
                    perm.swap(i, j);
                    if trial < step.map_or(cost, |s| s.2) {
                        step = Some((i, j, trial));
                    }
                }
            }
            match step {
                Some((i, j, t)) => {
                    perm.swap(i, j);
                    cost = t;
                }
                None => break,
            }
        }
        if cost < best_cost {
            best_cost = cost;
            best = perm;
        }
    }
    Ok(PermutedConfusion {
        matrix: permuted_rows(c, &best),
        permutation: best,
        cost: best_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(amps: Vec<f64>, label: usize) -> LabelState {
        LabelState::new(amps, label).unwrap()
    }

    fn basis(i: usize) -> Vec<f64> {
        let mut v = vec![0.0; LABEL_DIM];
        v[i] = 1.0;
        v
    }

    #[test]
    fn symmetric_basis_dimensions() {
        assert_eq!(SymBasis::new(16, 1).len(), 16);
        assert_eq!(SymBasis::new(16, 2).len(), 136);
        assert_eq!(SymBasis::new(16, 3).len(), 816);
    }

    #[test]
    fn symmetric_coordinates_preserve_the_tensor_power() {
        let phi: Vec<f64> = (0..4).map(|i| (i as f64 + 1.0) / 30f64.sqrt()).collect();
        let b = SymBasis::new(4, 3);
        let direct = tensor_power(&phi, 3);
        let back = b.expand(&b.coordinates(&phi));
        for (x, y) in direct.iter().zip(&back) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn single_copy_orthonormal_states_map_to_their_labels() {
        // class l is represented by basis state (l + 3) mod 16
        let train: Vec<LabelState> = (0..10).map(|l| state(basis((l + 3) % 16), l)).collect();
        let v = init_stack_unitary(&train, 1, 10).unwrap();
        assert!(linalg::column_orthonormality_error(&v.matrix) < 1e-9);
        for s in &train {
            assert_eq!(classify_stacked(&v, s, 10), s.label);
            let p = v.class_probabilities(&s.amplitudes);
            assert!((p[s.label] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_stack_matches_postselection() {
        let s = state((0..16).map(|i| ((i * 7) % 5) as f64 + 0.1).collect(), 0);
        let v = StackingUnitary::identity(1);
        assert_eq!(classify_stacked(&v, &s, 10), argmax(&s.probabilities()[..10]));
    }

    #[test]
    fn batch_probabilities_match_direct() {
        let train: Vec<LabelState> = (0..40)
            .map(|k| {
                state(
                    (0..16).map(|i| (((i + 1) * (k + 3)) % 11) as f64 + 0.5).collect(),
                    k % 10,
                )
            })
            .collect();
        let v = init_stack_unitary(&train, 2, 10).unwrap();
        let batch = v.class_probabilities_batch(&train, Execution::Sequential);
        for (s, p) in train.iter().zip(&batch) {
            let d = v.class_probabilities(&s.amplitudes);
            for (a, b) in d.iter().zip(p) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dense_layer_has_170_parameters_and_separates() {
        let samples: Vec<(Vec<f64>, usize)> = (0..10).map(|l| (basis(l), l)).collect();
        let cfg = DenseTraining {
            learning_rate: 1.0,
            epochs: 500,
            log_every: 0,
        };
        let layer = train_dense(&samples, 10, &cfg).unwrap();
        assert_eq!(layer.parameter_count(), 170);
        for (x, y) in &samples {
            assert_eq!(layer.predict(x), *y);
        }
    }

    #[test]
    fn confusion_identities() {
        let proxies: Vec<Vec<f64>> = (0..10).map(basis).collect();
        let c = confusion(&proxies, 10, |p| p.iter().map(|a| a * a).collect());
        assert_eq!(c, DenseTensor::identity(10));
        let p = permute_confusion(&c, 100, 1).unwrap();
        assert_eq!(p.permutation, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn row_swap_is_undone() {
        let mut perm: Vec<usize> = (0..10).collect();
        perm.swap(2, 7);
        let c = permuted_rows(&DenseTensor::identity(10), &perm);
        let p = permute_confusion(&c, 100, 1).unwrap();
        assert_eq!(p.matrix, DenseTensor::identity(10));
        assert_eq!(p.permutation, perm);
    }

    #[test]
    fn zero_projection_is_degenerate() {
        assert!(matches!(
            LabelState::new(vec![0.0; 16], 0),
            Err(Error::DegenerateProjection)
        ));
    }
}
