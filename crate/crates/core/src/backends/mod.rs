//! Scorer backends: one contract for every neural capability the selection
//! pipeline needs.
//!
//! [`BackendClient::call`] serializes a role request into the canonical
//! envelope, serves it from the [`RequestCache`] when possible, and otherwise
//! sends it through a [`Transport`] with bounded exponential-backoff retries.
//! Responses are schema- and range-checked before they are cached.

pub mod cache;
pub mod http;
pub mod mock;
pub mod protocol;
pub mod server;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, CacheRecord, RequestCache};
pub use protocol::RoleCall;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendRole {
    Tts,
    Asr,
    SpeakerEmbedA,
    SpeakerEmbedB,
    EmotionEmbed,
    Quality,
    Coherence,
    Semantic,
}

impl BackendRole {
    pub const ALL: [BackendRole; 8] = [
        BackendRole::Tts,
        BackendRole::Asr,
        BackendRole::SpeakerEmbedA,
        BackendRole::SpeakerEmbedB,
        BackendRole::EmotionEmbed,
        BackendRole::Quality,
        BackendRole::Coherence,
        BackendRole::Semantic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendRole::Tts => "tts",
            BackendRole::Asr => "asr",
            BackendRole::SpeakerEmbedA => "speaker_embed_a",
            BackendRole::SpeakerEmbedB => "speaker_embed_b",
            BackendRole::EmotionEmbed => "emotion_embed",
            BackendRole::Quality => "quality",
            BackendRole::Coherence => "coherence",
            BackendRole::Semantic => "semantic",
        }
    }

    /// Path under `/v1/`.
    pub fn endpoint(self) -> &'static str {
        match self {
            BackendRole::Tts => "tts",
            BackendRole::Asr => "asr",
            BackendRole::SpeakerEmbedA => "embed/speaker_a",
            BackendRole::SpeakerEmbedB => "embed/speaker_b",
            BackendRole::EmotionEmbed => "embed/emotion",
            BackendRole::Quality => "quality",
            BackendRole::Coherence => "coherence",
            BackendRole::Semantic => "semantic",
        }
    }

    pub fn from_endpoint(path: &str) -> Option<BackendRole> {
        BackendRole::ALL.into_iter().find(|r| r.endpoint() == path)
    }
}

impl fmt::Display for BackendRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BackendRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown backend role {s:?}"))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend role {0} is not configured")]
    NotConfigured(BackendRole),
    #[error("{role}: transport failed after {attempts} attempt(s): {message}")]
    Transport {
        role: BackendRole,
        attempts: u32,
        message: String,
    },
    #[error("{role}: backend answered HTTP {status}: {message}")]
    Status {
        role: BackendRole,
        status: u16,
        message: String,
    },
    #[error("{role}: schema violation: {detail}")]
    Schema { role: BackendRole, detail: String },
    #[error("{role}: field `{field}` value {value} outside [{min}, {max}]")]
    Range {
        role: BackendRole,
        field: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("cache: {0}")]
    Cache(String),
}

/// Failure reported by a [`Transport`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// Connection refused, reset, timed out, ...
    Io(String),
    /// Non-2xx response.
    Status { status: u16, body: String },
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self {
            TransportError::Io(_) => true,
            TransportError::Status { status, .. } => *status >= 500 || *status == 429 || *status == 408,
        }
    }
}

/// Moves one envelope to a backend and returns the raw response body.
pub trait Transport: Send + Sync {
    fn post(&self, endpoint: &Endpoint, role: BackendRole, body: &[u8]) -> Result<Vec<u8>, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    pub base_url: String,
    pub timeout_s: f64,
    pub retries: u32,
    pub model_id: String,
}

/// Endpoint per role plus client-wide knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSet {
    pub endpoints: BTreeMap<BackendRole, Endpoint>,
    /// Route every role through an in-process mock instead of HTTP.
    pub mock: bool,
    pub bearer_token: Option<String>,
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
}

impl BackendSet {
    /// Same base URL and settings for every role, with the given model ids.
    pub fn uniform(base_url: &str, model_ids: &BTreeMap<BackendRole, String>, timeout_s: f64, retries: u32) -> Self {
        let endpoints = BackendRole::ALL
            .into_iter()
            .filter_map(|role| {
                model_ids.get(&role).map(|model_id| {
                    (
                        role,
                        Endpoint {
                            base_url: base_url.trim_end_matches('/').to_string(),
                            timeout_s,
                            retries,
                            model_id: model_id.clone(),
                        },
                    )
                })
            })
            .collect();
        Self {
            endpoints,
            mock: false,
            bearer_token: None,
            backoff_base_ms: 200,
            max_in_flight: 8,
        }
    }

    pub fn endpoint(&self, role: BackendRole) -> Result<&Endpoint, BackendError> {
        self.endpoints
            .get(&role)
            .filter(|e| !e.model_id.is_empty())
            .ok_or(BackendError::NotConfigured(role))
    }
}

/// Counting semaphore capping concurrent wire calls.
#[derive(Debug)]
pub struct InFlightLimit {
    cap: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl InFlightLimit {
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut used = self.used.lock().expect("limiter lock");
        while *used >= self.cap {
            used = self.freed.wait(used).expect("limiter lock");
        }
        *used += 1;
        InFlightGuard { limit: self }
    }
}

pub struct InFlightGuard<'a> {
    limit: &'a InFlightLimit,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.limit.used.lock().expect("limiter lock") -= 1;
        self.limit.freed.notify_one();
    }
}

#[derive(Debug, Default)]
pub struct CallStats {
    wire_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl CallStats {
    pub fn wire_calls(&self) -> u64 {
        self.wire_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }
}

/// Thread-safe scorer client shared by every pipeline stage.
pub struct BackendClient {
    set: BackendSet,
    transport: Arc<dyn Transport>,
    cache: RequestCache,
    limit: InFlightLimit,
    stats: CallStats,
}

impl BackendClient {
    pub fn new(set: BackendSet, transport: Arc<dyn Transport>, cache: RequestCache) -> Self {
        let limit = InFlightLimit::new(set.max_in_flight);
        Self {
            set,
            transport,
            cache,
            limit,
            stats: CallStats::default(),
        }
    }

    pub fn backend_set(&self) -> &BackendSet {
        &self.set
    }

    pub fn stats(&self) -> &CallStats {
        &self.stats
    }

    pub fn cache(&self) -> &RequestCache {
        &self.cache
    }

    pub fn model_id(&self, role: BackendRole) -> Result<&str, BackendError> {
        self.set.endpoint(role).map(|e| e.model_id.as_str())
    }

    pub fn call<R: RoleCall>(&self, request: &R) -> Result<R::Response, BackendError> {
        let role = request.role();
        let endpoint = self.set.endpoint(role)?;
        let body = serde_json::to_vec(&protocol::RequestEnvelope {
            role: role.as_str(),
            model_id: &endpoint.model_id,
            payload: request,
        })
        .expect("request envelopes serialize");
        let key = cache_key(role, &endpoint.model_id, &body);

        if let Some(record) = self.cache.get(&key) {
            match protocol::parse_response(request, &endpoint.model_id, record.response.as_bytes()) {
                Ok(resp) => {
                    self.stats.cache_hits.fetch_add(1, Ordering::SeqCst);
                    return Ok(resp);
                }
                Err(e) => log::warn!("cached {role} response failed validation, refetching: {e}"),
            }
        }

        let raw = self.send_with_retries(endpoint, role, &body)?;
        let resp = protocol::parse_response(request, &endpoint.model_id, &raw)?;
        self.cache
            .put(&key, role, &endpoint.model_id, &raw)
            .map_err(|e| BackendError::Cache(e.to_string()))?;
        Ok(resp)
    }

    fn send_with_retries(&self, endpoint: &Endpoint, role: BackendRole, body: &[u8]) -> Result<Vec<u8>, BackendError> {
        let attempts = endpoint.retries + 1;
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.set.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            let outcome = {
                let _slot = self.limit.acquire();
                self.stats.wire_calls.fetch_add(1, Ordering::SeqCst);
                self.transport.post(endpoint, role, body)
            };
            match outcome {
                Ok(bytes) => return Ok(bytes),
                Err(e) if e.retryable() && attempt + 1 < attempts => {
                    log::debug!("{role}: attempt {} failed: {e:?}", attempt + 1);
                    last = Some(e);
                }
                Err(e) => {
                    last = Some(e);
                    break;
                }
            }
        }
        Err(match last.expect("at least one attempt") {
            TransportError::Io(message) => BackendError::Transport {
                role,
                attempts,
                message,
            },
            TransportError::Status { status, body } => BackendError::Status {
                role,
                status,
                message: serde_json::from_str::<protocol::ErrorBody>(&body)
                    .map(|b| format!("{}: {}", b.error.code, b.error.message))
                    .unwrap_or(body),
            },
        })
    }
}
