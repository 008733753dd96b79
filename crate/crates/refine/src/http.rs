//! Chat-completions transport. One POST per prompt, bearer auth from an
//! environment variable, bounded retries with exponential backoff on
//! transient failures, and an optional JSONL transcript of every
//! exchange.

use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use refine_core::gateway::{ChatCompleter, GatewayError, BATCH_MARKER};

use crate::config::GatewayConfig;

#[derive(Debug, thiserror::Error)]
pub enum HttpError {
    #[error("environment variable {0} is not set (expected the API key)")]
    MissingKey(String),
    #[error("cannot open transcript {0}: {1}")]
    Transcript(std::path::PathBuf, std::io::Error),
}

/// Counting semaphore bounding in-flight requests.
struct Permits {
    free: Mutex<usize>,
    signal: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Permits { free: Mutex::new(n.max(1)), signal: Condvar::new() }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().expect("permit lock");
        while *free == 0 {
            free = self.signal.wait(free).expect("permit lock");
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("permit lock") += 1;
        self.0.signal.notify_one();
    }
}

pub struct HttpGateway {
    agent: ureq::Agent,
    url: String,
    model: String,
    temperature: f64,
    merge_temperature: f64,
    max_tokens: u32,
    retries: u32,
    key: String,
    permits: Permits,
}

enum Attempt {
    Reply(String),
    /// Worth retrying: transport failure, timeout, 429, or 5xx.
    Transient(String),
    Fatal(String),
}

impl HttpGateway {
    /// Reads the API key eagerly so a missing key fails as a
    /// configuration error before any network traffic.
    pub fn from_config(config: &GatewayConfig) -> Result<Self, HttpError> {
        let key = std::env::var(&config.api_key_env)
            .map_err(|_| HttpError::MissingKey(config.api_key_env.clone()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpGateway {
            agent,
            url: format!("{}/chat/completions", config.endpoint.trim_end_matches('/')),
            model: config.model.clone(),
            temperature: config.temperature,
            merge_temperature: config.merge_temperature,
            max_tokens: config.max_tokens,
            retries: config.retries,
            key,
            permits: Permits::new(config.parallelism),
        })
    }

    fn try_once(&self, body: &serde_json::Value) -> Attempt {
        let sent = self
            .agent
            .post(&self.url)
            .header("authorization", format!("Bearer {}", self.key))
            .send_json(body);
        let mut response = match sent {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(format!("transport: {e}")),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Transient(format!("reading body: {e}")),
        };
        if status == 429 || (500..=599).contains(&status) {
            return Attempt::Transient(format!("status {status}: {}", text.trim()));
        }
        if !(200..=299).contains(&status) {
            return Attempt::Fatal(format!("status {status}: {}", text.trim()));
        }
        let parsed: serde_json::Value = match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(e) => return Attempt::Fatal(format!("malformed response body: {e}")),
        };
        match parsed["choices"][0]["message"]["content"].as_str() {
            Some(content) => Attempt::Reply(content.to_string()),
            None => Attempt::Fatal("response carries no message content".to_string()),
        }
    }
}

fn backoff(attempt: u32) -> Duration {
    let ms = 100u64.saturating_mul(1 << attempt.min(6));
    Duration::from_millis(ms.min(5_000))
}

impl ChatCompleter for HttpGateway {
    fn complete(&self, prompt: &str) -> Result<String, GatewayError> {
        let _permit = self.permits.acquire();
        // Generation wants diversity; the symbolic merge/aggregate steps
        // want determinism. The batch marker distinguishes them.
        let temperature = if prompt.contains(BATCH_MARKER) {
            self.temperature
        } else {
            self.merge_temperature
        };
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "max_tokens": self.max_tokens,
        });
        let mut attempt = 0u32;
        loop {
            match self.try_once(&body) {
                Attempt::Reply(reply) => return Ok(reply),
                Attempt::Transient(msg) if attempt < self.retries => {
                    std::thread::sleep(backoff(attempt));
                    attempt += 1;
                    let _ = msg;
                }
                Attempt::Transient(msg) | Attempt::Fatal(msg) => {
                    return Err(GatewayError::Backend(msg))
                }
            }
        }
    }
}

/// Wraps any backend and appends one JSONL record per call, so mock and
/// HTTP transcripts share a format.
pub struct Transcribing {
    inner: Box<dyn ChatCompleter>,
    file: Mutex<std::fs::File>,
}

impl Transcribing {
    pub fn new(inner: Box<dyn ChatCompleter>, path: &Path) -> Result<Self, HttpError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| HttpError::Transcript(path.to_path_buf(), e))?;
            }
        }
        let file = std::fs::File::create(path)
            .map_err(|e| HttpError::Transcript(path.to_path_buf(), e))?;
        Ok(Transcribing { inner, file: Mutex::new(file) })
    }
}

impl ChatCompleter for Transcribing {
    fn complete(&self, prompt: &str) -> Result<String, GatewayError> {
        let result = self.inner.complete(prompt);
        let record = match &result {
            Ok(reply) => serde_json::json!({"prompt": prompt, "reply": reply}),
            Err(e) => serde_json::json!({"prompt": prompt, "error": e.to_string()}),
        };
        use std::io::Write;
        let mut file = self.file.lock().expect("transcript lock");
        let _ = writeln!(file, "{record}");
        result
    }
}
