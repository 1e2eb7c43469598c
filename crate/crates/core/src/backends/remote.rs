//! HTTP client for an external model bridge.
//!
//! Wire protocol (JSON over HTTP):
//!
//! | route                  | request                                  | response |
//! |------------------------|------------------------------------------|----------|
//! | `GET /v1/capabilities` |                                          | `{model_id, max_length, supports_decode, supports_tokenize, max_concurrency}` |
//! | `POST /v1/probe`       | `{prefix, suffix, mask_length}`          | `{confidences: [f64; mask_length]}` |
//! | `POST /v1/decode`      | `{prefix, suffix, mask_length}`          | `{middle}` |
//! | `POST /v1/tokenize`    | `{text}`                                 | `{length}` |
//!
//! Errors come back as 4xx/5xx with `{"error": str}`.

use std::io::Read;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{validate_confidences, BackendError, Capabilities, Probe, ProbeBackend};
use crate::types::InfillTask;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_RETRIES: usize = 2;
/// Overrides the request timeout, in whole seconds.
pub const TIMEOUT_ENV: &str = "CAL_REMOTE_TIMEOUT_SECS";

const EXCERPT_CHARS: usize = 200;
const MAX_BODY_BYTES: u64 = 64 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteOptions {
    pub timeout: Duration,
    /// Extra attempts after a transport failure.
    pub retries: usize,
    /// First backoff; doubles on each retry.
    pub backoff: Duration,
    /// Client-side cap on in-flight requests; the bridge's own limit also applies.
    pub max_in_flight: usize,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        RemoteOptions {
            timeout: DEFAULT_TIMEOUT,
            retries: DEFAULT_RETRIES,
            backoff: Duration::from_millis(250),
            max_in_flight: 1,
        }
    }
}

impl RemoteOptions {
    /// Defaults with the timeout taken from `CAL_REMOTE_TIMEOUT_SECS` when set.
    pub fn from_env() -> Result<Self, BackendError> {
        let mut options = RemoteOptions::default();
        if let Ok(raw) = std::env::var(TIMEOUT_ENV) {
            let secs: u64 = raw.trim().parse().map_err(|_| {
                BackendError::Config(format!(
                    "{TIMEOUT_ENV}=`{raw}` is not a whole number of seconds"
                ))
            })?;
            options.timeout = Duration::from_secs(secs);
        }
        Ok(options)
    }
}

#[derive(Deserialize)]
struct ProbeResponse {
    confidences: Vec<f64>,
}

#[derive(Deserialize)]
struct DecodeResponse {
    middle: String,
}

#[derive(Deserialize)]
struct TokenizeResponse {
    length: usize,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

#[derive(Serialize)]
struct SpanRequest<'a> {
    prefix: &'a str,
    suffix: &'a str,
    mask_length: usize,
}

/// Counting gate bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn new(limit: usize) -> Self {
        Gate {
            limit: limit.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn enter(&self) -> GateGuard<'_> {
        let mut n = self.in_flight.lock().expect("gate lock");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("gate lock");
        }
        *n += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("gate lock") -= 1;
        self.0.freed.notify_one();
    }
}

fn excerpt(body: &str) -> String {
    body.chars().take(EXCERPT_CHARS).collect()
}

#[derive(Debug)]
pub struct RemoteBackend {
    base: String,
    backend_id: String,
    agent: ureq::Agent,
    options: RemoteOptions,
    capabilities: Capabilities,
    gate: Gate,
}

impl RemoteBackend {
    /// Performs the capabilities handshake.
    pub fn connect(url: &str, options: RemoteOptions) -> Result<Self, BackendError> {
        let base = url.trim_end_matches('/').to_string();
        if !base.starts_with("http://") && !base.starts_with("https://") {
            return Err(BackendError::Config(format!(
                "remote url `{url}` must start with http://"
            )));
        }
        let agent = ureq::AgentBuilder::new().timeout(options.timeout).build();
        let capabilities: Capabilities = call(&agent, &options, &base, "/v1/capabilities", None)?;
        let limit = options
            .max_in_flight
            .min(capabilities.max_concurrency.max(1));
        Ok(RemoteBackend {
            backend_id: format!("remote:{}", capabilities.model_id),
            base,
            agent,
            gate: Gate::new(limit),
            options,
            capabilities,
        })
    }

    pub fn in_flight_limit(&self) -> usize {
        self.gate.limit
    }

    fn post<T: DeserializeOwned>(
        &self,
        path: &str,
        body: serde_json::Value,
    ) -> Result<T, BackendError> {
        let _slot = self.gate.enter();
        call(&self.agent, &self.options, &self.base, path, Some(body))
    }

    fn check_length(&self, length: usize) -> Result<(), BackendError> {
        if length == 0 || length > self.capabilities.max_length {
            return Err(BackendError::Contract(format!(
                "mask length {length} outside [1, {}]",
                self.capabilities.max_length
            )));
        }
        Ok(())
    }

    pub fn remote_probe(
        &self,
        prefix: &str,
        suffix: &str,
        length: usize,
    ) -> Result<Vec<f64>, BackendError> {
        self.check_length(length)?;
        let body = serde_json::to_value(SpanRequest {
            prefix,
            suffix,
            mask_length: length,
        })
        .expect("request serializes");
        let resp: ProbeResponse = self.post("/v1/probe", body)?;
        validate_confidences(length, &resp.confidences).map_err(|e| BackendError::Protocol {
            message: e.to_string(),
            body_excerpt: excerpt(&format!("{:?}", resp.confidences)),
        })?;
        Ok(resp.confidences)
    }
}

fn call<T: DeserializeOwned>(
    agent: &ureq::Agent,
    options: &RemoteOptions,
    base: &str,
    path: &str,
    body: Option<serde_json::Value>,
) -> Result<T, BackendError> {
    let url = format!("{base}{path}");
    let attempts = options.retries + 1;
    let mut last = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            std::thread::sleep(options.backoff * (1u32 << (attempt - 1).min(16)));
        }
        let result = match &body {
            Some(b) => agent.post(&url).send_json(b.clone()),
            None => agent.get(&url).call(),
        };
        match result {
            Ok(resp) => {
                let text = read_body(resp)?;
                return serde_json::from_str(&text).map_err(|e| BackendError::Protocol {
                    message: format!("{path}: {e}"),
                    body_excerpt: excerpt(&text),
                });
            }
            Err(ureq::Error::Status(status, resp)) => {
                let text = read_body(resp).unwrap_or_default();
                let message = serde_json::from_str::<ErrorBody>(&text)
                    .map(|b| b.error)
                    .unwrap_or_else(|_| excerpt(&text));
                return Err(BackendError::Remote { status, message });
            }
            Err(ureq::Error::Transport(t)) => last = t.to_string(),
        }
    }
    Err(BackendError::Transport {
        attempts,
        message: last,
    })
}

fn read_body(resp: ureq::Response) -> Result<String, BackendError> {
    let mut text = String::new();
    resp.into_reader()
        .take(MAX_BODY_BYTES)
        .read_to_string(&mut text)
        .map_err(|e| BackendError::Transport {
            attempts: 1,
            message: format!("reading body: {e}"),
        })?;
    Ok(text)
}

impl ProbeBackend for RemoteBackend {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn capabilities(&self) -> &Capabilities {
        &self.capabilities
    }

    fn probe(&self, task: &InfillTask, length: usize) -> Result<Probe, BackendError> {
        let confidences = self.remote_probe(&task.prefix, &task.suffix, length)?;
        Probe::from_confidences(length, confidences)
    }

    fn decode(&self, task: &InfillTask, length: usize) -> Result<String, BackendError> {
        if !self.capabilities.supports_decode {
            return Err(BackendError::Unsupported("decode"));
        }
        self.check_length(length)?;
        let body = json!({"prefix": task.prefix, "suffix": task.suffix, "mask_length": length});
        Ok(self.post::<DecodeResponse>("/v1/decode", body)?.middle)
    }

    fn tokenize(&self, text: &str) -> Result<usize, BackendError> {
        if !self.capabilities.supports_tokenize {
            return Err(BackendError::Unsupported("tokenize"));
        }
        Ok(self
            .post::<TokenizeResponse>("/v1/tokenize", json!({ "text": text }))?
            .length)
    }
}
