use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: hex(&Sha256::digest(&bytes)),
            bytes: bytes.len() as u64,
        })
    }
}

/// Identity of one loaded split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub images: FileDigest,
    pub labels: FileDigest,
    /// Images actually used after any limit.
    pub count: usize,
    pub per_class: Vec<usize>,
    /// Changes under any reordering of the preprocessed images.
    pub ordering_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub phase: String,
    pub seconds: f64,
}

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub train: Option<SplitInfo>,
    pub test: Option<SplitInfo>,
    /// Artifacts this command consumed.
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
    pub timings: Vec<Timing>,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            config: config.clone(),
            train: None,
            test: None,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            timings: Vec::new(),
        }
    }

    /// Runs `f` and records its wall time under `phase`.
    pub fn timed<T>(&mut self, phase: &str, f: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
        let start = Instant::now();
        let out = f()?;
        let seconds = start.elapsed().as_secs_f64();
        log::info!("{phase}: {seconds:.2}s");
        self.timings.push(Timing {
            phase: phase.to_owned(),
            seconds,
        });
        Ok(out)
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    /// Writes `bytes` to `path` and lists it with its checksum.
    pub fn emit(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
        self.artifact(path)
    }

    /// Lists an already written file.
    pub fn artifact(&mut self, path: &Path) -> CliResult<()> {
        self.artifacts.push(FileDigest::of(path)?);
        Ok(())
    }

    /// Stores the manifest as `<dir>/<command>.manifest.json`.
    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(format!("{}.manifest.json", self.command));
        let json = serde_json::to_string_pretty(self)?;
        fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::new("E_FORMAT", format!("{}: {e}", path.display())))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
