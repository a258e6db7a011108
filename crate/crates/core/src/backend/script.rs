use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BackendError, BackendRequest, BackendResponse, CompletionBackend, ResponseRecord};
use crate::corpus::{normalize_name, StopwordLists};
use crate::llm_protocol::{classification_subject, extraction_news, render_entity_list, ExtractedEntity};

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate request key {0}")]
    DuplicateKey(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GazetteerEntry {
    pub description: String,
    #[serde(default)]
    pub categories: BTreeSet<String>,
}

/// Known entities keyed by normalized name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gazetteer {
    pub entries: BTreeMap<String, GazetteerEntry>,
}

/// A gazetteer entity found in text, with the spelling it appeared under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GazetteerMention {
    pub name: String,
    pub surface: String,
    pub start: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

impl Gazetteer {
    pub fn get(&self, name: &str) -> Option<&GazetteerEntry> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entities mentioned in `text`, one per entity, ordered by first
    /// occurrence. Matches are case-insensitive on word boundaries; trailing
    /// corporate suffixes after a match are folded into the surface spelling,
    /// and a match nested inside a longer one is dropped.
    pub fn mentions(&self, text: &str, stopwords: &StopwordLists) -> Vec<GazetteerMention> {
        let lower = text.to_lowercase();
        let mut hits: Vec<(usize, usize, &str)> = Vec::new();
        for name in self.entries.keys() {
            let mut from = 0;
            while let Some(pos) = lower[from..].find(name.as_str()) {
                let start = from + pos;
                let end = start + name.len();
                let before_ok = lower[..start].chars().next_back().is_none_or(|c| !is_word_char(c));
                let after_ok = lower[end..].chars().next().is_none_or(|c| !is_word_char(c));
                if before_ok && after_ok {
                    hits.push((start, extend_over_suffixes(&lower, end, stopwords), name));
                }
                from = start + lower[start..].chars().next().map_or(1, char::len_utf8);
            }
        }
        hits.sort_by(|a, b| a.0.cmp(&b.0).then((b.1 - b.0).cmp(&(a.1 - a.0))));
        let mut kept: Vec<(usize, usize, &str)> = Vec::new();
        for hit in hits {
            if kept.last().is_some_and(|last| hit.0 < last.1) {
                continue;
            }
            kept.push(hit);
        }
        let mut seen = BTreeSet::new();
        kept.into_iter()
            .filter(|(_, _, name)| seen.insert(*name))
            .map(|(start, end, name)| GazetteerMention {
                name: name.to_string(),
                surface: lower[start..end].to_string(),
                start,
            })
            .collect()
    }

    /// Numbered response listing the entities mentioned in `news`.
    pub fn extraction_response(&self, news: &str, stopwords: &StopwordLists) -> String {
        let entities: Vec<ExtractedEntity> = self
            .mentions(news, stopwords)
            .into_iter()
            .map(|m| ExtractedEntity {
                description: self.entries[&m.name].description.clone(),
                name: m.surface,
            })
            .collect();
        render_entity_list(&entities)
    }
}

/// Extends a match ending at `end` over following suffix tokens such as
/// " ltd." or " corp.", returning the new end offset.
fn extend_over_suffixes(lower: &str, mut end: usize, stopwords: &StopwordLists) -> usize {
    loop {
        let rest = &lower[end..];
        let Some(after_space) = rest.strip_prefix(' ') else {
            return end;
        };
        let token_len = after_space.find(char::is_whitespace).unwrap_or(after_space.len());
        let token = after_space[..token_len].trim_end_matches([',', ';', ':', '!', '?', ')', '"', '\'']);
        let bare = token.trim_end_matches('.');
        if token.is_empty()
            || !(stopwords.company_suffixes.contains(token) || stopwords.company_suffixes.contains(bare))
        {
            return end;
        }
        end += 1 + token.len();
    }
}

/// Canned responses plus an optional gazetteer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScriptFile {
    pub entries: BTreeMap<String, String>,
    pub gazetteer: Option<Gazetteer>,
}

#[derive(Deserialize)]
struct GazetteerHeader {
    gazetteer: BTreeMap<String, GazetteerEntry>,
}

pub fn load_script(path: &Path, stopwords: &StopwordLists) -> Result<ScriptFile, ScriptError> {
    let text = fs::read_to_string(path).map_err(|source| ScriptError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_script(&text, stopwords)
}

/// Parses JSON Lines of `{"key","response"}` records, optionally preceded by
/// a `{"gazetteer":{...}}` record. Gazetteer names must already be normalized.
pub fn parse_script(text: &str, stopwords: &StopwordLists) -> Result<ScriptFile, ScriptError> {
    let mut script = ScriptFile::default();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| ScriptError::Parse { line: line_no, message };
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if value.get("gazetteer").is_some() {
            if script.gazetteer.is_some() {
                return Err(parse_err("more than one gazetteer record".into()));
            }
            let header: GazetteerHeader = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
            for name in header.gazetteer.keys() {
                match normalize_name(name, stopwords) {
                    Ok(normalized) if &normalized == name => {}
                    _ => {
                        return Err(parse_err(format!(
                            "gazetteer name {name:?} must be a normalized lowercase name"
                        )))
                    }
                }
            }
            script.gazetteer = Some(Gazetteer {
                entries: header.gazetteer,
            });
            continue;
        }
        let record: ResponseRecord = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        if script.entries.contains_key(&record.key) {
            return Err(ScriptError::DuplicateKey(record.key));
        }
        script.entries.insert(record.key, record.response);
    }
    Ok(script)
}

/// Deterministic backend: keyed lookup first, gazetteer synthesis second.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    script: ScriptFile,
    stopwords: StopwordLists,
    label: String,
}

impl ScriptedBackend {
    pub fn new(script: ScriptFile, stopwords: StopwordLists) -> Self {
        Self {
            script,
            stopwords,
            label: "script".into(),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn script(&self) -> &ScriptFile {
        &self.script
    }

    fn synthesize(&self, request: &BackendRequest) -> Option<String> {
        let gazetteer = self.script.gazetteer.as_ref()?;
        if let Some(news) = extraction_news(&request.prompt) {
            return Some(gazetteer.extraction_response(&news, &self.stopwords));
        }
        let (name, category) = classification_subject(&request.prompt)?;
        let normalized = normalize_name(&name, &self.stopwords).ok()?;
        let entry = gazetteer.get(&normalized)?;
        let answer = if entry.categories.contains(category.trim()) {
            "Yes"
        } else {
            "No"
        };
        Some(answer.to_string())
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        request.validate()?;
        let key = request.key();
        let text = match self.script.entries.get(&key) {
            Some(text) => text.clone(),
            None => self.synthesize(request).ok_or(BackendError::ScriptMiss { key })?,
        };
        Ok(BackendResponse::synthesized(&request.prompt, text))
    }

    fn identity(&self) -> String {
        self.label.clone()
    }
}
