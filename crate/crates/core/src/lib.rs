//! Deterministic tensor-network image classifiers.
//!
//! Images are amplitude-encoded as matrix product states or tree tensor
//! networks, summed per class into prototype states, and combined into a
//! single orthogonal classifier without any gradient training. Predictions
//! can be refined by stacking unitaries built from the classifier's own
//! label-space outputs.
//!
//! ```no_run
//! use tnc_core::{dataset, mps, classifier::{self, Mode}, exec::Execution};
//!
//! let train = dataset::Dataset::from_idx("train-images-idx3-ubyte", "train-labels-idx1-ubyte", 32)?;
//! let plan = mps::BuildPlan { d_encode: 32, d_batch: 32, d_final: 32, batch_size: 10, orthogonalise: true };
//! let model = mps::train_classifier(&train, &plan, Execution::default())?;
//! let readout = model.readout()?;
//! let report = classifier::evaluate(&readout, &train, Mode::Postselect, Execution::default())?;
//! println!("{:.2}%", report.accuracy);
//! # Ok::<(), tnc_core::Error>(())
//! ```

pub mod circuit;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod mps;
pub mod persist;
pub mod stacking;
pub mod tensor;
pub mod ttn;

pub use error::{Error, Result};
pub use tensor::DenseTensor;

/// Number of classes in both supported datasets.
pub const CLASS_COUNT: usize = 10;
/// Label register width, `ceil(log2(CLASS_COUNT))`.
pub const LABEL_QUBITS: usize = 4;
/// Dimension of the label register.
pub const LABEL_DIM: usize = 1 << LABEL_QUBITS;
