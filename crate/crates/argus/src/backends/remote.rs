//! Chat-style HTTP backend.
//!
//! Speaks a minimal chat-completion wire shape: POST one JSON body
//! `{model, messages: [{role, content}], temperature, seed?}` and read back
//! `{content}`. Nothing vendor-specific; any service (or test stub)
//! answering that shape works.
//!
//! The bearer credential is resolved from a named environment variable at
//! request time and lives only on the request builder; it is never stored
//! on the client or written to any log or error message.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use super::{AgentBackend, BackendError, GenerateRequest, GenerateResponse};
use crate::payload::Payload;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEndpointConfig {
    /// Full request URL, e.g. `http://127.0.0.1:8080/v1/chat`.
    pub url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token. None for
    /// unauthenticated endpoints.
    #[serde(default)]
    pub credential_env: Option<String>,
    /// Retries after the first attempt.
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_timeout_ms")]
    pub request_timeout_ms: u64,
    /// Concurrent in-flight request cap.
    #[serde(default = "default_max_inflight")]
    pub max_inflight: usize,
    /// Send the derived seed with each request.
    #[serde(default = "default_true")]
    pub send_seed: bool,
}

fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    50
}
fn default_timeout_ms() -> u64 {
    10_000
}
fn default_max_inflight() -> usize {
    8
}
fn default_true() -> bool {
    true
}

impl RemoteEndpointConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> RemoteEndpointConfig {
        RemoteEndpointConfig {
            url: url.into(),
            model: model.into(),
            credential_env: None,
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_ms(),
            request_timeout_ms: default_timeout_ms(),
            max_inflight: default_max_inflight(),
            send_seed: true,
        }
    }
}

/// Field order is fixed by the struct, so serialization is deterministic.
#[derive(Debug, Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    content: String,
}

pub struct RemoteAgent {
    name: String,
    cfg: RemoteEndpointConfig,
    client: reqwest::Client,
    inflight: Arc<Semaphore>,
    retries: AtomicU64,
}

impl RemoteAgent {
    pub fn new(name: impl Into<String>, cfg: RemoteEndpointConfig) -> Result<RemoteAgent, BackendError> {
        if cfg.max_inflight == 0 {
            return Err(BackendError::Config("max_inflight must be >= 1".into()));
        }
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(cfg.request_timeout_ms))
            .build()
            .map_err(|e| BackendError::Config(format!("http client: {e}")))?;
        Ok(RemoteAgent {
            name: name.into(),
            inflight: Arc::new(Semaphore::new(cfg.max_inflight)),
            cfg,
            client,
            retries: AtomicU64::new(0),
        })
    }

    /// Cumulative retry count across all requests.
    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    fn credential(&self) -> Result<Option<String>, BackendError> {
        match &self.cfg.credential_env {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| {
                BackendError::Config(format!("credential variable `{var}` not set"))
            }),
        }
    }

    async fn call(&self, prompt: &str, temperature: f64, seed: Option<u64>) -> Result<String, BackendError> {
        let _permit = self
            .inflight
            .acquire()
            .await
            .map_err(|_| BackendError::Unavailable("request limiter closed".into()))?;
        let token = self.credential()?;
        let body = WireRequest {
            model: &self.cfg.model,
            messages: vec![WireMessage { role: "user", content: prompt }],
            temperature,
            seed,
        };

        let mut last_failure = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                let backoff = self.cfg.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                tokio::time::sleep(Duration::from_millis(backoff)).await;
                self.retries.fetch_add(1, Ordering::Relaxed);
            }
            let mut req = self.client.post(&self.cfg.url).json(&body);
            if let Some(token) = &token {
                req = req.bearer_auth(token);
            }
            match req.send().await {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let parsed: WireResponse = resp
                            .json()
                            .await
                            .map_err(|e| BackendError::Malformed(format!("response body: {e}")))?;
                        return Ok(parsed.content);
                    }
                    // Server-side and throttling statuses are retryable;
                    // other client errors are not going to improve.
                    if status.is_server_error() || status.as_u16() == 429 {
                        last_failure = format!("status {status}");
                        continue;
                    }
                    return Err(BackendError::Malformed(format!("status {status}")));
                }
                Err(e) => {
                    // reqwest errors carry no credential material.
                    last_failure = e.to_string();
                    continue;
                }
            }
        }
        Err(BackendError::Unavailable(format!(
            "no success after {} attempts: {last_failure}",
            self.cfg.max_retries + 1
        )))
    }
}

/// Structured value convention shared with the sim stack: a `value:` prefix
/// makes the number machine-readable downstream.
fn parse_value_prefix(content: &str) -> Option<f64> {
    content.trim().strip_prefix("value:")?.trim().parse().ok()
}

#[async_trait]
impl AgentBackend for RemoteAgent {
    fn name(&self) -> &str {
        &self.name
    }

    async fn generate(&self, req: GenerateRequest) -> Result<GenerateResponse, BackendError> {
        let seed = self.cfg.send_seed.then_some(req.seed);
        let content = self.call(&req.prompt, req.temperature, seed).await?;
        let payload = match parse_value_prefix(&content) {
            Some(v) => Payload::with_value(content, v),
            None => Payload::text(content),
        };
        Ok(GenerateResponse {
            payload,
            trace: format!("remote {} via {}", req.node, self.cfg.model),
            simulated_nanos: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_fill_in() {
        let cfg: RemoteEndpointConfig =
            serde_json::from_str(r#"{"url": "http://x", "model": "m"}"#).unwrap();
        assert_eq!(cfg.max_retries, 3);
        assert_eq!(cfg.max_inflight, 8);
        assert!(cfg.send_seed);
        assert!(cfg.credential_env.is_none());
    }

    #[test]
    fn request_serialization_is_deterministic_and_omits_empty_seed() {
        let with_seed = WireRequest {
            model: "m",
            messages: vec![WireMessage { role: "user", content: "hi" }],
            temperature: 0.5,
            seed: Some(9),
        };
        let json = serde_json::to_string(&with_seed).unwrap();
        assert_eq!(
            json,
            r#"{"model":"m","messages":[{"role":"user","content":"hi"}],"temperature":0.5,"seed":9}"#
        );
        let without = WireRequest { seed: None, ..with_seed };
        assert!(!serde_json::to_string(&without).unwrap().contains("seed"));
    }

    #[test]
    fn value_prefix_parses() {
        assert_eq!(parse_value_prefix("value: 4.5"), Some(4.5));
        assert_eq!(parse_value_prefix("  value:-2 "), Some(-2.0));
        assert_eq!(parse_value_prefix("val: 4.5"), None);
        assert_eq!(parse_value_prefix("value: many"), None);
    }

    #[test]
    fn missing_credential_variable_is_a_config_error() {
        let mut cfg = RemoteEndpointConfig::new("http://127.0.0.1:1/x", "m");
        cfg.credential_env = Some("ARGUS_TEST_CREDENTIAL_THAT_IS_NOT_SET".into());
        let agent = RemoteAgent::new("r", cfg).unwrap();
        let err = agent.credential().unwrap_err();
        assert!(matches!(err, BackendError::Config(_)));
        // The error names the variable, not its contents.
        assert!(err.to_string().contains("ARGUS_TEST_CREDENTIAL_THAT_IS_NOT_SET"));
    }
}
