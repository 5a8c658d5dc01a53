use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use amr_core::datagen::DatasetManifest;
use amr_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;

/// Written next to every output so the run can be repeated with `amr replay`.
/// Contains no timestamps or host details: identical runs write identical
/// manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    /// Command line as typed, without the program name.
    pub argv: Vec<String>,
    /// Every flag after defaults were filled in.
    pub command: Command,
    pub seeds: Vec<u64>,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<PathBuf>,
    /// SHA-256 of the JSON dataset manifest the run read or wrote.
    pub dataset_manifest_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        write!(s, "{b:02x}").expect("write to string");
    }
    s
}

pub fn manifest_hash(m: &DatasetManifest) -> Result<String> {
    Ok(hex_sha256(&serde_json::to_vec(m)?))
}

impl InputFile {
    pub fn hash(path: &Path) -> Result<Self> {
        Ok(InputFile {
            path: path.to_path_buf(),
            sha256: hex_sha256(&std::fs::read(path)?),
        })
    }

    /// Error if the file changed since the manifest was written.
    pub fn verify(&self) -> Result<()> {
        let now = Self::hash(&self.path)?;
        if now.sha256 != self.sha256 {
            return Err(Error::Format {
                offset: 0,
                message: format!(
                    "{} changed since the run was recorded (sha256 {} != {})",
                    self.path.display(),
                    now.sha256,
                    self.sha256
                ),
            });
        }
        Ok(())
    }
}

impl RunManifest {
    pub fn new(argv: Vec<String>, command: &Command) -> Self {
        RunManifest {
            subcommand: command.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            argv,
            command: command.clone(),
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            dataset_manifest_sha256: None,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Format {
            offset: 0,
            message: format!("{}: {e}", path.display()),
        })
    }
}
