//! Output directory bookkeeping and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use levy_pme::diagnostics::PropertyReport;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Writes files under one directory and remembers their checksums.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Io(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.root.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(FileEntry {
            path: name.to_string(),
            bytes: contents.len(),
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(())
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertySummary {
    pub name: String,
    pub instances: usize,
    pub max_violation: f64,
    pub slack: f64,
    pub pass: bool,
}

impl From<&PropertyReport> for PropertySummary {
    fn from(r: &PropertyReport) -> Self {
        Self {
            name: r.name.clone(),
            instances: r.instances,
            max_violation: r.max_violation,
            slack: r.slack,
            pass: r.pass,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub cli: &'static str,
    pub library: &'static str,
}

/// Everything needed to reproduce and audit one invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub arguments: Vec<String>,
    pub versions: Versions,
    /// Fully resolved configuration, defaults included.
    pub config: Option<serde_json::Value>,
    pub seed: Option<u64>,
    pub wall_time_seconds: Vec<(String, f64)>,
    pub files: Vec<FileEntry>,
    pub properties: Vec<PropertySummary>,
    pub status: String,
    pub message: Option<String>,
    pub warnings: Vec<String>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

impl RunManifest {
    pub fn new(command: &str, arguments: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            arguments,
            versions: Versions { cli: env!("CARGO_PKG_VERSION"), library: levy_pme::VERSION },
            config: None,
            seed: None,
            wall_time_seconds: Vec::new(),
            files: Vec::new(),
            properties: Vec::new(),
            status: "ok".into(),
            message: None,
            warnings: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))? + "\n";
        let path = dir.join(MANIFEST_NAME);
        fs::write(&path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
    }
}
