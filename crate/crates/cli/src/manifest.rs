//! Run manifests: the resolved config plus digests of every input and output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// Every config field, defaults included.
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: &impl Serialize) -> Result<Self, CliError> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config: serde_json::to_value(config).map_err(hvp_core::Error::from)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(hvp_core::Error::from)? + "\n";
        fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    /// The `config` section of a manifest written by `command`.
    pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path, command: &str) -> Result<T, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: not a run manifest: {e}", path.display())))?;
        if m.command != command {
            return Err(CliError::Usage(format!(
                "{}: manifest is for `{}`, not `{command}`",
                path.display(),
                m.command
            )));
        }
        serde_json::from_value(m.config)
            .map_err(|e| CliError::Usage(format!("{}: invalid config: {e}", path.display())))
    }
}
