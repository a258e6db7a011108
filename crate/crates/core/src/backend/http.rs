use std::env;
use std::fmt;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::{BackendError, BackendRequest, BackendResponse, CompletionBackend};

pub const ENDPOINT_VAR: &str = "SUPPLYGRAPH_ENDPOINT";
pub const API_KEY_VAR: &str = "SUPPLYGRAPH_API_KEY";
pub const MODEL_VAR: &str = "SUPPLYGRAPH_MODEL";
pub const RETRY_CAP_VAR: &str = "SUPPLYGRAPH_RETRY_CAP";
pub const BACKOFF_MS_VAR: &str = "SUPPLYGRAPH_BACKOFF_MS";

#[derive(Clone)]
pub struct HttpConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub timeout: Duration,
    /// Extra attempts after the first one.
    pub retry_cap: u32,
    pub base_backoff: Duration,
    pub max_backoff: Duration,
    pub max_in_flight: usize,
    pub jitter_seed: u64,
}

impl fmt::Debug for HttpConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpConfig")
            .field("endpoint", &self.endpoint)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("model", &self.model)
            .field("timeout", &self.timeout)
            .field("retry_cap", &self.retry_cap)
            .field("max_in_flight", &self.max_in_flight)
            .finish()
    }
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            model: None,
            timeout: Duration::from_secs(30),
            retry_cap: 3,
            base_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(8),
            max_in_flight: 4,
            jitter_seed: 0,
        }
    }

    /// Endpoint, credential and model from the environment.
    pub fn from_env() -> Result<Self, BackendError> {
        let endpoint = env::var(ENDPOINT_VAR).map_err(|_| BackendError::Unavailable {
            attempts: 0,
            last: format!("{ENDPOINT_VAR} is not set"),
        })?;
        Ok(Self::new(endpoint).with_env_settings())
    }

    /// Credential, model and retry settings from the environment; the
    /// endpoint is left as given.
    pub fn with_env_settings(mut self) -> Self {
        self.api_key = env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty());
        self.model = env::var(MODEL_VAR).ok().filter(|m| !m.is_empty());
        if let Some(cap) = env_number(RETRY_CAP_VAR) {
            self.retry_cap = cap as u32;
        }
        if let Some(ms) = env_number(BACKOFF_MS_VAR) {
            self.base_backoff = Duration::from_millis(ms);
        }
        self
    }

    fn backoff(&self, attempt: u32, rng: &mut ChaCha8Rng) -> Duration {
        let exp = self
            .base_backoff
            .saturating_mul(1u32 << attempt.min(16))
            .min(self.max_backoff);
        let jitter = rng.random_range(0.5..1.0);
        exp.mul_f64(jitter)
    }
}

fn env_number(var: &str) -> Option<u64> {
    let raw = env::var(var).ok()?;
    match raw.trim().parse() {
        Ok(n) => Some(n),
        Err(_) => {
            log::warn!("ignoring {var}={raw:?}: not a non-negative integer");
            None
        }
    }
}

struct InFlight {
    count: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut count = self.count.lock().unwrap_or_else(|e| e.into_inner());
        while *count >= self.limit {
            count = self.freed.wait(count).unwrap_or_else(|e| e.into_inner());
        }
        *count += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut count = self.0.count.lock().unwrap_or_else(|e| e.into_inner());
        *count -= 1;
        self.0.freed.notify_one();
    }
}

enum Attempt {
    Done(BackendResponse),
    Transient(String),
    Fatal(BackendError),
}

/// Chat-completion client. The system prompt is sent as the system message;
/// the user and question prompts are joined into the user message.
pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    in_flight: InFlight,
    rng: Mutex<ChaCha8Rng>,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend").field("config", &self.config).finish()
    }
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            in_flight: InFlight {
                count: Mutex::new(0),
                freed: Condvar::new(),
                limit: config.max_in_flight.max(1),
            },
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(config.jitter_seed)),
            agent,
            config,
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    pub fn request_body(&self, request: &BackendRequest) -> Value {
        let prompt = &request.prompt;
        let mut body = json!({
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": format!("{}\n\n{}", prompt.user, prompt.question)},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        if let Some(model) = &self.config.model {
            body["model"] = json!(model);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let started = Instant::now();
        let mut call = self
            .agent
            .post(&self.config.endpoint)
            .header("content-type", "application/json");
        if let Some(key) = &self.config.api_key {
            call = call.header("authorization", &format!("Bearer {key}"));
        }
        let response = match call.send_json(body) {
            Ok(response) => response,
            Err(err) => return Attempt::Transient(err.to_string()),
        };
        let status = response.status().as_u16();
        let text = match response.into_body().read_to_string() {
            Ok(text) => text,
            Err(err) => return Attempt::Transient(err.to_string()),
        };
        if status == 408 || status == 429 || status >= 500 {
            return Attempt::Transient(format!("status {status}"));
        }
        if !(200..300).contains(&status) {
            return Attempt::Fatal(BackendError::Rejected { status, body: text });
        }
        match parse_completion(&text) {
            Ok((content, input_tokens, output_tokens)) => Attempt::Done(BackendResponse {
                text: content,
                input_tokens,
                output_tokens,
                latency_ms: started.elapsed().as_millis() as u64,
            }),
            Err(err) => Attempt::Fatal(err),
        }
    }
}

fn parse_completion(text: &str) -> Result<(String, u64, u64), BackendError> {
    let value: Value = serde_json::from_str(text).map_err(|e| BackendError::Malformed(e.to_string()))?;
    let content = value
        .pointer("/choices/0/message/content")
        .or_else(|| value.pointer("/choices/0/text"))
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))?;
    let usage = |field: &str| {
        value
            .pointer(&format!("/usage/{field}"))
            .and_then(Value::as_u64)
            .unwrap_or(0)
    };
    Ok((content.to_string(), usage("prompt_tokens"), usage("completion_tokens")))
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        request.validate()?;
        let body = self.request_body(request);
        let _permit = self.in_flight.acquire();
        let attempts = 1 + self.config.retry_cap;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = {
                    let mut rng = self.rng.lock().unwrap_or_else(|e| e.into_inner());
                    self.config.backoff(attempt - 1, &mut rng)
                };
                log::debug!(
                    "backend retry tag={} attempt={} delay_ms={}",
                    request.request_tag,
                    attempt + 1,
                    delay.as_millis()
                );
                thread::sleep(delay);
            }
            match self.attempt(&body) {
                Attempt::Done(response) => return Ok(response),
                Attempt::Fatal(err) => return Err(err),
                Attempt::Transient(reason) => {
                    log::warn!(
                        "backend transient failure tag={} attempt={} reason={reason}",
                        request.request_tag,
                        attempt + 1
                    );
                    last = reason;
                }
            }
        }
        Err(BackendError::Unavailable { attempts, last })
    }

    fn identity(&self) -> String {
        match &self.config.model {
            Some(model) => format!("http:{}#{model}", self.config.endpoint),
            None => format!("http:{}", self.config.endpoint),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_protocol::PromptTriple;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Minimal HTTP/1.1 server answering every request with `status` and
    /// `body`; returns the base URL and a request counter.
    fn stub_server(status: u16, body: &'static str) -> (String, Arc<AtomicUsize>, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let (h, b) = (hits.clone(), bodies.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0usize;
                let mut headers = Vec::new();
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap_or(0);
                    }
                    headers.push(line);
                }
                let mut payload = vec![0; length];
                let _ = reader.read_exact(&mut payload);
                h.fetch_add(1, Ordering::SeqCst);
                b.lock()
                    .unwrap()
                    .push(format!("{}{}", headers.concat(), String::from_utf8_lossy(&payload)));
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        (url, hits, bodies)
    }

    fn fast(url: String, retry_cap: u32) -> HttpConfig {
        HttpConfig {
            retry_cap,
            base_backoff: Duration::from_millis(1),
            max_backoff: Duration::from_millis(4),
            timeout: Duration::from_secs(5),
            ..HttpConfig::new(url)
        }
    }

    fn request() -> BackendRequest {
        BackendRequest::new(
            PromptTriple {
                system: "sys".into(),
                user: "usr".into(),
                question: "q?".into(),
            },
            "t",
        )
    }

    #[test]
    fn failing_server_gets_at_most_one_plus_retry_cap_attempts() {
        let (url, hits, _) = stub_server(503, "{}");
        let backend = HttpBackend::new(fast(url, 3));
        let err = backend.complete(&request()).unwrap_err();
        assert!(matches!(err, BackendError::Unavailable { attempts: 4, .. }), "{err:?}");
        assert_eq!(hits.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, hits, _) = stub_server(400, r#"{"error":"bad"}"#);
        let backend = HttpBackend::new(fast(url, 3));
        assert!(matches!(
            backend.complete(&request()),
            Err(BackendError::Rejected { status: 400, .. })
        ));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn parses_chat_completion_and_sends_messages() {
        let (url, _, bodies) = stub_server(
            200,
            r#"{"choices":[{"message":{"role":"assistant","content":"Yes"}}],"usage":{"prompt_tokens":12,"completion_tokens":1}}"#,
        );
        let mut config = fast(url, 0);
        config.api_key = Some("secret-token".into());
        let backend = HttpBackend::new(config);
        let response = backend.complete(&request()).unwrap();
        assert_eq!(response.text, "Yes");
        assert_eq!((response.input_tokens, response.output_tokens), (12, 1));
        let sent = bodies.lock().unwrap()[0].clone();
        assert!(
            sent.contains("authorization: Bearer secret-token") || sent.contains("Authorization: Bearer secret-token")
        );
        let json: Value = serde_json::from_str(&sent[sent.find('{').unwrap()..]).unwrap();
        assert_eq!(json["messages"][1]["content"], "usr\n\nq?");
        assert_eq!(json["messages"][0]["role"], "system");
        assert!(!format!("{backend:?}").contains("secret-token"));
        assert!(!backend.identity().contains("secret-token"));
    }

    #[test]
    fn unreachable_endpoint_is_unavailable() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        drop(listener);
        let backend = HttpBackend::new(fast(url, 1));
        assert!(matches!(
            backend.complete(&request()),
            Err(BackendError::Unavailable { attempts: 2, .. })
        ));
    }
}
