use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::script::{parse_script, ScriptError};
use super::{BackendError, BackendRequest, BackendResponse, CompletionBackend, ResponseRecord};
use crate::corpus::StopwordLists;

/// Serves responses captured by a [`RecordingBackend`], byte for byte.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    entries: BTreeMap<String, String>,
    label: String,
}

impl ReplayBackend {
    pub fn open(path: &Path) -> Result<Self, ScriptError> {
        let text = fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let script = parse_script(&text, &StopwordLists::default())?;
        Ok(Self {
            entries: script.entries,
            label: format!("replay:{}", path.display()),
        })
    }

    pub fn from_entries(entries: BTreeMap<String, String>) -> Self {
        Self {
            entries,
            label: "replay".into(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl CompletionBackend for ReplayBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        request.validate()?;
        let key = request.key();
        match self.entries.get(&key) {
            Some(text) => Ok(BackendResponse::synthesized(&request.prompt, text.clone())),
            None => Err(BackendError::ReplayMiss { key }),
        }
    }

    fn identity(&self) -> String {
        self.label.clone()
    }
}

struct CassetteWriter {
    file: File,
    recorded: HashSet<String>,
}

/// Proxies a live backend and appends every new `(key, response)` pair to a
/// cassette file. A key already on the cassette is not written again.
pub struct RecordingBackend<B> {
    live: B,
    path: PathBuf,
    writer: Mutex<CassetteWriter>,
}

impl<B: CompletionBackend> RecordingBackend<B> {
    pub fn open(live: B, path: &Path) -> Result<Self, BackendError> {
        let write_err = |e: std::io::Error| BackendError::CassetteWrite(format!("{}: {e}", path.display()));
        let recorded = if path.exists() {
            let text = fs::read_to_string(path).map_err(write_err)?;
            parse_script(&text, &StopwordLists::default())
                .map_err(|e| BackendError::CassetteWrite(e.to_string()))?
                .entries
                .into_keys()
                .collect()
        } else {
            HashSet::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(write_err)?;
        Ok(Self {
            live,
            path: path.to_path_buf(),
            writer: Mutex::new(CassetteWriter { file, recorded }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Completes through the live backend and captures the response.
    pub fn record(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let response = self.live.complete(request)?;
        let key = request.key();
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        if writer.recorded.insert(key.clone()) {
            let line = ResponseRecord {
                key,
                response: response.text.clone(),
            }
            .to_string();
            writeln!(writer.file, "{line}")
                .and_then(|_| writer.file.flush())
                .map_err(|e| BackendError::CassetteWrite(e.to_string()))?;
        }
        Ok(response)
    }
}

impl<B: CompletionBackend> CompletionBackend for RecordingBackend<B> {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        self.record(request)
    }

    fn identity(&self) -> String {
        format!("record:{}<-{}", self.path.display(), self.live.identity())
    }
}
