use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mbgen_core::io::{file_sha256, sha256_hex, write_atomic};
use mbgen_core::Error;
use serde::Serialize;

use crate::config::RunConfig;

/// Failure classes with distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or a required input that does not exist (exit 2).
    Usage(String),
    /// `--check` thresholds not met (exit 1).
    CheckFailed(Vec<String>),
    /// Anything raised by the pipeline (exit 1).
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::CheckFailed(failed) => write!(f, "check failed: {}", failed.join("; ")),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::CheckFailed(_) | CliError::Core(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a RunConfig,
    args: &'a serde_json::Value,
    inputs: &'a BTreeMap<String, String>,
    artifacts: &'a BTreeMap<String, String>,
}

/// One sub-command invocation: output directory, resolved configuration and
/// the hashes of everything read and written.
pub struct Run {
    pub out: PathBuf,
    pub config: RunConfig,
    command: &'static str,
    args: serde_json::Value,
    inputs: BTreeMap<String, String>,
    artifacts: BTreeMap<String, String>,
}

fn label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

impl Run {
    pub fn new(
        out: PathBuf,
        config: RunConfig,
        command: &'static str,
        args: serde_json::Value,
    ) -> Self {
        Self {
            out,
            config,
            command,
            args,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Checks that an input exists and records its hash.
    pub fn input(&mut self, path: &Path, what: &str) -> CliResult<()> {
        if !path.is_file() {
            return Err(CliError::Usage(format!(
                "{what} not found at {}",
                path.display()
            )));
        }
        self.inputs.insert(label(path), file_sha256(path)?);
        Ok(())
    }

    pub fn artifact(&mut self, path: &Path) -> CliResult<()> {
        self.artifacts.insert(label(path), file_sha256(path)?);
        Ok(())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let p = self.path(name);
        write_atomic(&p, bytes)?;
        self.artifact(&p)?;
        Ok(p)
    }

    /// Writes `manifest-<command>.json` and returns its hash. No timestamps or
    /// absolute paths go in, so identical runs give identical manifests.
    pub fn finish(self) -> CliResult<String> {
        let m = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            config: &self.config,
            args: &self.args,
            inputs: &self.inputs,
            artifacts: &self.artifacts,
        };
        let mut bytes = serde_json::to_vec_pretty(&m).map_err(Error::from)?;
        bytes.push(b'\n');
        write_atomic(&self.path(&format!("manifest-{}.json", self.command)), &bytes)?;
        Ok(sha256_hex(&bytes))
    }
}
