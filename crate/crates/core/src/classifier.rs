//! Scoring, prediction, evaluation, and bond-order sweeps.
//!
//! Both network kinds reduce to a [`Readout`]: a set of leg isometries
//! `E_k` (one per contiguous block of qubits) and a centre tensor whose last
//! axis is the label register. The generated state for label `b` is
//! `(⊗ E_k) · centre[.., b]`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg;
use crate::mps::{self, BuildPlan, MpoClassifier};
use crate::tensor::DenseTensor;
use crate::ttn::{self, TtoClassifier};

/// Largest qubit count for which the full classifier unitary is built.
pub const TRACEOUT_LIMIT: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Overlap with the single all-zero padding.
    Postselect,
    /// Probability summed over every padding.
    Traceout,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Postselect => "postselect",
            Mode::Traceout => "traceout",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "postselect" => Ok(Mode::Postselect),
            "traceout" => Ok(Mode::Traceout),
            other => Err(Error::InvalidInput(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    /// One entry per label bitstring.
    pub scores: Vec<f64>,
    pub mode: Mode,
}

#[derive(Debug)]
pub struct Readout {
    legs: Vec<DenseTensor>,
    leg_qubits: Vec<usize>,
    centre: DenseTensor,
    class_count: usize,
    isometric: bool,
    /// Transpose of the completed classifier unitary, built on first use.
    unitary_t: OnceLock<Result<DenseTensor>>,
}

impl Readout {
    /// `legs[k]` has shape `(2^{n_k}, D_k)`; `centre` has shape
    /// `(D_1, …, D_r, label_dim)`. `isometric` asserts that the label
    /// columns of `centre` are orthonormal.
    pub fn new(legs: Vec<DenseTensor>, centre: DenseTensor, class_count: usize, isometric: bool) -> Result<Self> {
        let r = legs.len();
        if centre.rank() != r + 1 {
            return Err(Error::Shape(format!("centre of rank {} for {r} legs", centre.rank())));
        }
        let mut leg_qubits = Vec::with_capacity(r);
        for (k, leg) in legs.iter().enumerate() {
            if leg.rank() != 2 || !leg.rows().is_power_of_two() || leg.cols() != centre.shape()[k] {
                return Err(Error::Shape(format!(
                    "leg {k} of shape {:?} does not fit centre {:?}",
                    leg.shape(),
                    centre.shape()
                )));
            }
            leg_qubits.push(leg.rows().trailing_zeros() as usize);
        }
        let label_dim = centre.shape()[r];
        if class_count > label_dim {
            return Err(Error::Shape(format!("{class_count} classes in {label_dim} labels")));
        }
        Ok(Self {
            legs,
            leg_qubits,
            centre,
            class_count,
            isometric,
            unitary_t: OnceLock::new(),
        })
    }

    pub fn qubit_count(&self) -> usize {
        self.leg_qubits.iter().sum()
    }

    pub fn label_dim(&self) -> usize {
        *self.centre.shape().last().expect("centre has a label axis")
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn is_isometric(&self) -> bool {
        self.isometric
    }

    fn check_image(&self, image: &[f64]) -> Result<()> {
        if image.len() != 1 << self.qubit_count() {
            return Err(Error::Shape(format!(
                "image of length {} for a {}-qubit classifier",
                image.len(),
                self.qubit_count()
            )));
        }
        Ok(())
    }

    /// Label-register amplitudes `⟨image| U |0…0, b⟩` for every `b`.
    pub fn project(&self, image: &[f64]) -> Result<Vec<f64>> {
        self.check_image(image)?;
        let shape: Vec<usize> = self.leg_qubits.iter().map(|&n| 1 << n).collect();
        let mut x = DenseTensor::new(shape, image.to_vec())?;
        for (k, leg) in self.legs.iter().enumerate() {
            x = x.apply_on_axis(k, leg)?;
        }
        let dim = self.label_dim();
        let c = self.centre.data();
        let mut out = vec![0.0; dim];
        for (i, xi) in x.data().iter().enumerate() {
            if *xi == 0.0 {
                continue;
            }
            for (o, cv) in out.iter_mut().zip(&c[i * dim..(i + 1) * dim]) {
                *o += xi * cv;
            }
        }
        Ok(out)
    }

    /// Generated state for label `b` as a dense vector.
    pub fn class_state(&self, b: usize) -> Result<Vec<f64>> {
        let r = self.legs.len();
        let dim = self.label_dim();
        let inner: Vec<usize> = self.centre.shape()[..r].to_vec();
        let col: Vec<f64> = self.centre.data().iter().skip(b).step_by(dim).copied().collect();
        let mut t = DenseTensor::new(inner, col)?;
        for (k, leg) in self.legs.iter().enumerate() {
            t = t.apply_on_axis(k, &leg.transpose())?;
        }
        Ok(t.into_data())
    }

    fn unitary_t(&self) -> Result<&DenseTensor> {
        if !self.isometric {
            return Err(Error::NotOrthogonalised);
        }
        let n = self.qubit_count();
        if n > TRACEOUT_LIMIT {
            return Err(Error::Capacity {
                qubits: n,
                limit: TRACEOUT_LIMIT,
            });
        }
        self.unitary_t
            .get_or_init(|| self.build_unitary_t())
            .as_ref()
            .map_err(|e| Error::Numerical(e.to_string()))
    }

    /// `Uᵀ = Ĉᵀ (⊗ Ê_kᵀ)` where `Ê_k` completes each leg to an orthogonal
    /// matrix and `Ĉ` embeds the centre columns at paddings `p = 0` and
    /// completes them. Column `p·label_dim + b` of `U` is the input
    /// `|p, b⟩`.
    fn build_unitary_t(&self) -> Result<DenseTensor> {
        let dim = self.label_dim();
        let total = 1usize << self.qubit_count();
        if total < dim {
            return Err(Error::Shape("label register larger than the state space".into()));
        }
        let full_legs = self
            .legs
            .iter()
            .map(linalg::complete_orthonormal)
            .collect::<Result<Vec<_>>>()?;
        // embedded centre columns, indexed by the completed leg bases
        let r = self.legs.len();
        let inner: Vec<usize> = self.centre.shape()[..r].to_vec();
        let outer: Vec<usize> = self.leg_qubits.iter().map(|&n| 1 << n).collect();
        let mut embedded = DenseTensor::zeros(vec![total, dim]);
        let mut idx = vec![0usize; r];
        for (flat, chunk) in self.centre.data().chunks_exact(dim).enumerate() {
            let mut rem = flat;
            for ax in (0..r).rev() {
                idx[ax] = rem % inner[ax];
                rem /= inner[ax];
            }
            let row = idx.iter().zip(&outer).fold(0, |acc, (&i, &e)| acc * e + i);
            for (b, v) in chunk.iter().enumerate() {
                embedded.set(&[row, b], *v);
            }
        }
        let c_hat = linalg::complete_orthonormal(&embedded)?;
        let mut legs_kron = DenseTensor::identity(1);
        for leg in &full_legs {
            legs_kron = kron(&legs_kron, leg);
        }
        Ok(linalg::matmul(&c_hat.transpose(), &legs_kron.transpose()))
    }

    /// Label probabilities summed over all paddings.
    pub fn traceout(&self, image: &[f64]) -> Result<Vec<f64>> {
        self.check_image(image)?;
        let ut = self.unitary_t()?;
        let z = linalg::matvec(ut, image);
        let dim = self.label_dim();
        let mut out = vec![0.0; dim];
        for chunk in z.chunks_exact(dim) {
            for (o, v) in out.iter_mut().zip(chunk) {
                *o += v * v;
            }
        }
        Ok(out)
    }

    pub fn score(&self, image: &[f64], mode: Mode) -> Result<ScoreVector> {
        let scores = match mode {
            Mode::Postselect => self.project(image)?.into_iter().map(|a| a * a).collect(),
            Mode::Traceout => self.traceout(image)?,
        };
        Ok(ScoreVector { scores, mode })
    }
}

fn kron(a: &DenseTensor, b: &DenseTensor) -> DenseTensor {
    let (ar, ac, br, bc) = (a.rows(), a.cols(), b.rows(), b.cols());
    DenseTensor::from_fn(vec![ar * br, ac * bc], |ix| {
        a.get(&[ix[0] / br, ix[1] / bc]) * b.get(&[ix[0] % br, ix[1] % bc])
    })
}

/// Index of the largest score among the first `class_count` entries.
/// Exact ties go to the lowest index; non-finite scores are skipped.
pub fn predict(scores: &ScoreVector, class_count: usize) -> usize {
    argmax(&scores.scores[..class_count.min(scores.scores.len())])
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v.is_finite() && v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Accuracy on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mode: Mode,
    /// Percentage in `[0, 100]`.
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub per_class_correct: Vec<usize>,
    pub per_class_total: Vec<usize>,
    /// Images whose top score was shared by more than one class.
    pub ties: usize,
}

pub fn evaluate(readout: &Readout, data: &Dataset, mode: Mode, exec: Execution) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyInput("evaluation dataset"));
    }
    let k = readout.class_count();
    let outcomes = exec.try_map(&data.items, |v| -> Result<(usize, bool)> {
        let s = readout.score(&v.amplitudes, mode)?;
        let p = predict(&s, k);
        let tied = s.scores[..k]
            .iter()
            .enumerate()
            .any(|(i, &x)| i != p && x == s.scores[p]);
        Ok((p, tied))
    })?;
    let mut per_class_correct = vec![0; data.class_count];
    let mut per_class_total = vec![0; data.class_count];
    let mut ties = 0;
    for (v, (p, tied)) in data.items.iter().zip(&outcomes) {
        per_class_total[v.label] += 1;
        if *p == v.label {
            per_class_correct[v.label] += 1;
        }
        ties += usize::from(*tied);
    }
    if ties > 0 {
        log::info!("{ties} images had tied top scores");
    }
    let correct: usize = per_class_correct.iter().sum();
    Ok(Evaluation {
        mode,
        accuracy: 100.0 * correct as f64 / data.len() as f64,
        correct,
        total: data.len(),
        per_class_correct,
        per_class_total,
        ties,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    #[default]
    Mps,
    Ttn,
}

impl std::str::FromStr for NetworkKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mps" => Ok(NetworkKind::Mps),
            "ttn" => Ok(NetworkKind::Ttn),
            other => Err(Error::InvalidInput(format!("unknown network kind {other:?}"))),
        }
    }
}

/// A trained classifier of either kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Mps(MpoClassifier),
    Ttn(TtoClassifier),
}

impl Model {
    pub fn readout(&self) -> Result<Readout> {
        match self {
            Model::Mps(m) => m.readout(),
            Model::Ttn(t) => t.readout(),
        }
    }

    pub fn kind(&self) -> NetworkKind {
        match self {
            Model::Mps(_) => NetworkKind::Mps,
            Model::Ttn(_) => NetworkKind::Ttn,
        }
    }

    pub fn is_orthogonalised(&self) -> bool {
        match self {
            Model::Mps(m) => m.orthogonalised,
            Model::Ttn(t) => t.orthogonalised,
        }
    }

    pub fn train(kind: NetworkKind, data: &Dataset, plan: &BuildPlan, exec: Execution) -> Result<Self> {
        Ok(match kind {
            NetworkKind::Mps => Model::Mps(mps::train_classifier(data, plan, exec)?),
            NetworkKind::Ttn => Model::Ttn(ttn::train_classifier(data, plan, exec)?),
        })
    }
}

/// Train/test accuracy for one parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: NetworkKind,
    pub d_encode: usize,
    pub d_batch: usize,
    pub d_final: usize,
    pub orthogonalised: bool,
    pub train: Vec<Evaluation>,
    pub test: Vec<Evaluation>,
}

impl EvalReport {
    pub fn accuracy(&self, split: Split, mode: Mode) -> Option<f64> {
        let list = match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        };
        list.iter().find(|e| e.mode == mode).map(|e| e.accuracy)
    }

    /// One CSV row per split and mode, matching [`SWEEP_CSV_HEADER`].
    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows = Vec::new();
        for (split, list) in [("train", &self.train), ("test", &self.test)] {
            for e in list {
                rows.push(format!(
                    "{},{},{},{},{},{:.4}",
                    self.d_encode,
                    self.d_batch,
                    self.d_final,
                    e.mode.as_str(),
                    split,
                    e.accuracy
                ));
            }
        }
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

pub const SWEEP_CSV_HEADER: &str = "d_encode,d_batch,d_final,mode,split,accuracy";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub d_encode: Vec<usize>,
    pub d_batch: Vec<usize>,
    pub d_final: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub kind: NetworkKind,
    pub batch_size: usize,
    pub orthogonalise: bool,
    pub modes: Vec<Mode>,
    /// Also evaluate on the training images.
    pub with_train: bool,
}

/// Evaluates every grid point. Class sum states are shared by all
/// `d_final` values with the same `(d_encode, d_batch)`.
pub fn sweep(
    train: &Dataset,
    test: &Dataset,
    grid: &SweepGrid,
    options: &SweepOptions,
    exec: Execution,
) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::new();
    for &d_encode in &grid.d_encode {
        for &d_batch in &grid.d_batch {
            let plan = BuildPlan {
                d_encode,
                d_batch,
                d_final: d_batch,
                batch_size: options.batch_size,
                orthogonalise: options.orthogonalise,
            };
            let sums = match options.kind {
                NetworkKind::Mps => Sums::Mps(mps::class_sum_states(train, &plan, exec)?.0),
                NetworkKind::Ttn => Sums::Ttn(ttn::class_sum_states(train, &plan, exec)?.0),
            };
            for &d_final in &grid.d_final {
                let model = match &sums {
                    Sums::Mps(s) => Model::Mps(mps::combine_orthogonalise(s, d_final, options.orthogonalise)?),
                    Sums::Ttn(s) => Model::Ttn(ttn::combine_orthogonalise(s, d_final, options.orthogonalise)?),
                };
                let readout = model.readout()?;
                let mut report = EvalReport {
                    kind: options.kind,
                    d_encode,
                    d_batch,
                    d_final,
                    orthogonalised: model.is_orthogonalised(),
                    train: Vec::new(),
                    test: Vec::new(),
                };
                for &mode in &options.modes {
                    if mode == Mode::Traceout && !readout.is_isometric() {
                        log::warn!("d_final={d_final}: classifier not orthogonalised, skipping traceout");
                        continue;
                    }
                    if options.with_train {
                        report.train.push(evaluate(&readout, train, mode, exec)?);
                    }
                    report.test.push(evaluate(&readout, test, mode, exec)?);
                }
                log::info!(
                    "d_encode={d_encode} d_batch={d_batch} d_final={d_final}: test {:?}",
                    report.test.iter().map(|e| e.accuracy).collect::<Vec<_>>()
                );
                reports.push(report);
            }
        }
    }
    Ok(reports)
}

enum Sums {
    Mps(Vec<mps::Mps>),
    Ttn(Vec<ttn::Ttn>),
}
