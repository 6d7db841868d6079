use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tnc_core::classifier::{Mode, NetworkKind, SweepGrid};
use tnc_core::dataset::PadPolicy;
use tnc_core::mps::{Batching, BuildPlan};

use crate::CliError;

/// Every knob of a run. Stored verbatim in each manifest, so nothing about
/// a run is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Side of the zero-padded square canvas.
    pub target_side: usize,
    pub pad: PadPolicy,
    /// Use only the first `n` training images.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub kind: NetworkKind,
    pub d_encode: usize,
    pub d_batch: usize,
    pub d_final: usize,
    pub batch_size: usize,
    pub orthogonalise: bool,
    pub batching: Batching,
    pub modes: Vec<Mode>,
    pub stack: StackSpec,
    pub dense_learning_rate: f64,
    pub dense_epochs: usize,
    pub sweep_d_encode: Vec<usize>,
    pub sweep_d_batch: Vec<usize>,
    pub sweep_d_final: Vec<usize>,
    /// Seeds the confusion-permutation restarts.
    pub seed: u64,
    pub permutation_restarts: usize,
    pub output_dir: PathBuf,
    /// Sequential execution when false.
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::with_data_dir(Path::new("data"))
    }
}

impl RunConfig {
    /// Defaults with the four standard IDX file names under `dir`.
    pub fn with_data_dir(dir: &Path) -> Self {
        Self {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
            target_side: 32,
            pad: PadPolicy::Centred,
            train_limit: None,
            test_limit: None,
            kind: NetworkKind::Mps,
            d_encode: 32,
            d_batch: 32,
            d_final: 32,
            batch_size: 10,
            orthogonalise: true,
            batching: Batching::ClassFirst,
            modes: vec![Mode::Postselect, Mode::Traceout],
            stack: StackSpec::None,
            dense_learning_rate: 0.05,
            dense_epochs: 10_000,
            sweep_d_encode: vec![32],
            sweep_d_batch: vec![32],
            sweep_d_final: vec![2, 4, 8, 12, 16, 20, 24, 28, 32],
            seed: 0,
            permutation_restarts: 100,
            output_dir: PathBuf::from("run"),
            parallel: true,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bonds = [
            ("d_encode", self.d_encode),
            ("d_batch", self.d_batch),
            ("d_final", self.d_final),
        ];
        for (name, v) in bonds {
            if v == 0 {
                return Err(CliError::config(format!("{name} must be at least 1")));
            }
        }
        for (name, list) in [
            ("sweep_d_encode", &self.sweep_d_encode),
            ("sweep_d_batch", &self.sweep_d_batch),
            ("sweep_d_final", &self.sweep_d_final),
        ] {
            if list.is_empty() || list.contains(&0) {
                return Err(CliError::config(format!("{name} needs positive entries")));
            }
        }
        if self.batch_size < 2 {
            return Err(CliError::config("batch_size must be at least 2"));
        }
        if self.modes.is_empty() {
            return Err(CliError::config("at least one classification mode is required"));
        }
        if self.kind == NetworkKind::Ttn && self.batching == Batching::Mixed {
            return Err(CliError::config("mixed batching is only available for mps"));
        }
        if !self.dense_learning_rate.is_finite() || self.dense_learning_rate <= 0.0 {
            return Err(CliError::config("dense_learning_rate must be positive"));
        }
        Ok(())
    }

    pub fn plan(&self) -> BuildPlan {
        BuildPlan {
            d_encode: self.d_encode,
            d_batch: self.d_batch,
            d_final: self.d_final,
            batch_size: self.batch_size,
            orthogonalise: self.orthogonalise,
        }
    }

    pub fn grid(&self) -> SweepGrid {
        SweepGrid {
            d_encode: self.sweep_d_encode.clone(),
            d_batch: self.sweep_d_batch.clone(),
            d_final: self.sweep_d_final.clone(),
        }
    }
}

/// Parses a lowercase enum name the way the config file spells it.
pub fn parse_name<T: DeserializeOwned>(field: &str, s: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| CliError::config(format!("invalid {field} {s:?}")))
}

/// Which refinement to build on top of a classifier.
///
/// Spelled `none`, `classical`, `dense:M`, `hier:CxL` (C copies per layer,
/// L layers) or `mpo:M,D` (M copies, bond order D).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StackSpec {
    #[default]
    None,
    Classical,
    Dense {
        copies: usize,
    },
    Hierarchical {
        copies: usize,
        layers: usize,
    },
    Mpo {
        copies: usize,
        bond: usize,
    },
}

impl fmt::Display for StackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StackSpec::None => write!(f, "none"),
            StackSpec::Classical => write!(f, "classical"),
            StackSpec::Dense { copies } => write!(f, "dense:{copies}"),
            StackSpec::Hierarchical { copies, layers } => write!(f, "hier:{copies}x{layers}"),
            StackSpec::Mpo { copies, bond } => write!(f, "mpo:{copies},{bond}"),
        }
    }
}

impl FromStr for StackSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("invalid stacking spec {s:?}");
        let num = |t: &str| t.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(bad);
        let (head, tail) = s.split_once(':').unwrap_or((s, ""));
        match (head, tail) {
            ("none", "") => Ok(StackSpec::None),
            ("classical", "") => Ok(StackSpec::Classical),
            ("dense", m) => Ok(StackSpec::Dense { copies: num(m)? }),
            ("hier", t) => {
                let (c, l) = t.split_once('x').ok_or_else(bad)?;
                Ok(StackSpec::Hierarchical {
                    copies: num(c)?,
                    layers: num(l)?,
                })
            }
            ("mpo", t) => {
                let (m, d) = t.split_once(',').ok_or_else(bad)?;
                Ok(StackSpec::Mpo {
                    copies: num(m)?,
                    bond: num(d)?,
                })
            }
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for StackSpec {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<StackSpec> for String {
    fn from(s: StackSpec) -> String {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stack_specs_round_trip() {
        for s in ["none", "classical", "dense:3", "hier:2x5", "mpo:4,8"] {
            let spec: StackSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        for s in ["dense", "dense:0", "hier:2", "mpo:3", "quantum"] {
            assert!(s.parse::<StackSpec>().is_err(), "{s}");
        }
    }

    #[test]
    fn config_json_round_trips_with_defaults() {
        let cfg = RunConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), cfg);
        let partial: RunConfig = serde_json::from_str(r#"{"kind":"ttn","d_final":16,"stack":"dense:2"}"#).unwrap();
        assert_eq!(partial.kind, NetworkKind::Ttn);
        assert_eq!(partial.stack, StackSpec::Dense { copies: 2 });
        assert_eq!(partial.d_encode, 32);
    }

    #[test]
    fn unknown_fields_and_bad_values_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"bond":3}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"kind":"mera"}"#).is_err());
        let cfg = RunConfig {
            d_final: 0,
            ..RunConfig::default()
        };
        assert_eq!(cfg.validate().unwrap_err().code, "E_CONFIG");
    }
}
