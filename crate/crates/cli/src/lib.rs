//! Library side of the `tnc` command-line driver. Every subcommand is a
//! plain function taking a [`RunConfig`], so runs can also be scripted from
//! Rust.

pub mod commands;
pub mod config;
pub mod manifest;

use std::fmt;
use std::path::Path;

pub use config::{RunConfig, StackSpec};
pub use manifest::RunManifest;

/// A failure reported as a single `error[CODE]: message` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("E_CONFIG", message)
    }

    /// An input artifact produced by an earlier command is missing.
    pub fn dependency(message: impl Into<String>) -> Self {
        Self::new("E_DEPENDENCY", message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        tnc_core::Error::io(path, e).into()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // newlines would break the one-line contract
        let msg = self.message.replace(['\n', '\r'], " ");
        write!(f, "error[{}]: {msg}", self.code)
    }
}

impl std::error::Error for CliError {}

impl From<tnc_core::Error> for CliError {
    fn from(e: tnc_core::Error) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new("E_FORMAT", e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
