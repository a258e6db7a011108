use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize)]
struct Digested<'a> {
    command: &'a str,
    config: &'a Value,
    backend: Option<&'a str>,
    inputs: &'a [FileDigest],
    outputs: &'a [FileDigest],
}

#[derive(Serialize)]
struct Timestamps {
    started: String,
    finished: String,
    duration_ms: u64,
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    command: &'a str,
    config: &'a Value,
    backend: Option<&'a str>,
    inputs: &'a [FileDigest],
    outputs: &'a [FileDigest],
    manifest_digest: String,
    /// Excluded from `manifest_digest`.
    timestamps: Timestamps,
}

/// Collects what a command read and wrote; timestamps are kept apart from
/// everything that goes into the digest.
pub struct RunManifest {
    command: &'static str,
    config: Value,
    backend: Option<String>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    started: DateTime<Utc>,
}

impl RunManifest {
    pub fn new(command: &'static str, config: Value) -> Self {
        Self {
            command,
            config,
            backend: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Utc::now(),
        }
    }

    pub fn backend(&mut self, identity: String) {
        self.backend = Some(identity);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Writes `contents` to `dir/name` and records it under `name`.
    pub fn output(&mut self, dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = dir.join(name);
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        self.outputs.push(FileDigest {
            path: name.to_string(),
            sha256: sha256_hex(contents),
        });
        Ok(path)
    }

    pub fn digest(&self) -> String {
        let body = Digested {
            command: self.command,
            config: &self.config,
            backend: self.backend.as_deref(),
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        sha256_hex(&serde_json::to_vec(&body).expect("manifest serializes"))
    }

    pub fn write(self, path: &Path) -> Result<()> {
        let finished = Utc::now();
        let file = ManifestFile {
            command: self.command,
            config: &self.config,
            backend: self.backend.as_deref(),
            inputs: &self.inputs,
            outputs: &self.outputs,
            manifest_digest: self.digest(),
            timestamps: Timestamps {
                started: self.started.to_rfc3339_opts(SecondsFormat::Millis, true),
                finished: finished.to_rfc3339_opts(SecondsFormat::Millis, true),
                duration_ms: (finished - self.started).num_milliseconds().max(0) as u64,
            },
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
    }
}
