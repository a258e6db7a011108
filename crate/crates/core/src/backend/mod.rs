//! Completion backends.
//!
//! Every backend answers a [`BackendRequest`] with plain completion text. The
//! HTTP client talks to a chat-completion endpoint; the scripted backend
//! serves canned responses or synthesizes them from a gazetteer; the replay
//! and recording backends capture and reproduce responses from a cassette.

mod cassette;
mod http;
mod script;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm_protocol::PromptTriple;

pub use cassette::{RecordingBackend, ReplayBackend};
pub use http::{HttpBackend, HttpConfig};
pub use script::{
    load_script, parse_script, Gazetteer, GazetteerEntry, GazetteerMention, ScriptError, ScriptFile, ScriptedBackend,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("backend rejected the request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("no recorded response for request {key}")]
    ReplayMiss { key: String },
    #[error("script has no response for request {key}")]
    ScriptMiss { key: String },
    #[error("writing cassette: {0}")]
    CassetteWrite(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub prompt: PromptTriple,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Free-form label for logs; not part of the request key.
    pub request_tag: String,
}

impl BackendRequest {
    pub fn new(prompt: PromptTriple, request_tag: impl Into<String>) -> Self {
        Self {
            prompt,
            temperature: 0.0,
            max_output_tokens: 512,
            request_tag: request_tag.into(),
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_output_tokens(mut self, max_output_tokens: u32) -> Self {
        self.max_output_tokens = max_output_tokens;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} must be a non-negative number",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(BackendError::InvalidRequest(
                "max_output_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn key(&self) -> String {
        request_key(&self.prompt, self.temperature)
    }
}

/// SHA-256 over the three prompt parts and the temperature, length-prefixed.
pub fn request_key(prompt: &PromptTriple, temperature: f64) -> String {
    let mut hasher = Sha256::new();
    for part in [&prompt.system, &prompt.user, &prompt.question] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    // -0.0 and 0.0 key the same
    let temperature = if temperature == 0.0 { 0.0 } else { temperature };
    hasher.update(temperature.to_bits().to_le_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
}

impl BackendResponse {
    /// A response whose token counts are estimated by whitespace splitting.
    pub fn synthesized(prompt: &PromptTriple, text: String) -> Self {
        let input_tokens = [&prompt.system, &prompt.user, &prompt.question]
            .iter()
            .map(|p| p.split_whitespace().count() as u64)
            .sum();
        Self {
            output_tokens: text.split_whitespace().count() as u64,
            text,
            input_tokens,
            latency_ms: 0,
        }
    }
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;

    /// Human-readable identity recorded in run manifests. Never includes credentials.
    fn identity(&self) -> String;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Box<B> {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).complete(request)
    }

    fn identity(&self) -> String {
        (**self).identity()
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for &B {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).complete(request)
    }

    fn identity(&self) -> String {
        (**self).identity()
    }
}

/// One `{"key","response"}` cassette or script record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub key: String,
    pub response: String,
}

impl fmt::Display for ResponseRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serde_json::to_string(self).map_err(|_| fmt::Error)?)
    }
}
