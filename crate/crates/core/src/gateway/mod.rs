//! Chat-completion client.
//!
//! A [`Gateway`] wraps one [`ChatBackend`] (live HTTP, scripted mock, or
//! transcript replay) and adds rate limiting, retries with jittered
//! exponential backoff, token/cost metering and transcript recording.

mod http;
mod meter;
mod mock;
mod ratelimit;
mod tokens;
mod transcript;

pub use http::{HttpBackend, HttpConfig};
pub use meter::{Cost, CostMeter, MeterSnapshot, Prices};
pub use mock::{MockAnswer, MockBackend};
pub use ratelimit::{RateLimiter, RateLimits};
pub use tokens::{content_tokens, estimate_tokens, prompt_tokens, ByteEstimator, TokenCounter};
pub use transcript::{
    read_transcript, RecordedResponse, ReplayBackend, TranscriptRecord, TranscriptWriter,
};

use std::path::PathBuf;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::{Message, PromptBundle};

pub const DEFAULT_TEMPERATURE: f64 = 0.35;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("rate limited by the provider after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("request timed out")]
    Timeout,
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("authentication failed: {0}")]
    AuthError(String),
    #[error("server error {status}: {body}")]
    Server { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no recorded response for request {hash}")]
    ReplayMiss { hash: String },
    #[error("corrupt transcript {path} line {line}: {message}")]
    CorruptTranscript {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transcript i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            GatewayError::RateLimited { .. }
                | GatewayError::Timeout
                | GatewayError::Server { .. }
                | GatewayError::Transport(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<Message>) -> Self {
        ChatRequest {
            model: model.into(),
            messages,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: None,
        }
    }

    pub fn from_bundle(model: impl Into<String>, bundle: &PromptBundle) -> Self {
        ChatRequest::new(model, bundle.messages.clone())
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == Some(0) {
            return Err(GatewayError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        Ok(())
    }

    /// Chat-completions JSON body. Field order is fixed, so equal requests
    /// produce equal bytes.
    pub fn wire_body(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("chat request serializes")
    }

    /// Hex SHA-256 of [`ChatRequest::wire_body`]; the transcript key.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.wire_body()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// What a backend hands back before metering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub content: String,
    /// Provider-reported usage; `None` means "estimate locally".
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency: Duration,
    pub backend: BackendKind,
}

pub trait ChatBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError>;

    /// Requests that left the process.
    fn network_calls(&self) -> u64 {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub base_delay: Duration,
    #[serde(with = "millis")]
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): exponential, capped,
    /// scaled by a jitter factor in [0.5, 1].
    pub fn backoff(&self, attempt: u32, jitter: f64) -> Duration {
        let exp = self.base_delay.saturating_mul(
            1u32.checked_shl(attempt.saturating_sub(1))
                .unwrap_or(u32::MAX),
        );
        exp.min(self.max_delay)
            .mul_f64(0.5 + 0.5 * jitter.clamp(0.0, 1.0))
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

pub(crate) fn unix_millis(t: SystemTime) -> u64 {
    t.duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    meter: CostMeter,
    retry: RetryPolicy,
    limiter: RateLimiter,
    transcript: Option<TranscriptWriter>,
    counter: Box<dyn TokenCounter>,
    cache: Option<ReplayBackend>,
}

impl Gateway {
    pub fn new(backend: Box<dyn ChatBackend>) -> Self {
        Gateway {
            backend,
            meter: CostMeter::default(),
            retry: RetryPolicy::default(),
            limiter: RateLimiter::new(RateLimits::default()),
            transcript: None,
            counter: Box::new(ByteEstimator),
            cache: None,
        }
    }

    pub fn with_prices(mut self, prices: Prices) -> Self {
        self.meter = CostMeter::new(prices);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limits(mut self, limits: RateLimits) -> Self {
        self.limiter = RateLimiter::new(limits);
        self
    }

    pub fn with_transcript(mut self, writer: TranscriptWriter) -> Self {
        self.transcript = Some(writer);
        self
    }

    pub fn with_token_counter(mut self, counter: Box<dyn TokenCounter>) -> Self {
        self.counter = counter;
        self
    }

    /// Answers requests already present in `cache` from it (metered, but
    /// neither sent nor re-recorded). Used to resume interrupted runs.
    pub fn with_cache(mut self, cache: ReplayBackend) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn meter(&self) -> &CostMeter {
        &self.meter
    }

    pub fn token_counter(&self) -> &dyn TokenCounter {
        self.counter.as_ref()
    }

    pub fn network_calls(&self) -> u64 {
        self.backend.network_calls()
    }

    pub fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        if let Some(recorded) = self.cache.as_ref().and_then(|c| c.lookup(request)) {
            self.meter
                .record(recorded.prompt_tokens, recorded.completion_tokens);
            return Ok(ChatResponse {
                content: recorded.content.clone(),
                prompt_tokens: recorded.prompt_tokens,
                completion_tokens: recorded.completion_tokens,
                latency: Duration::from_millis(recorded.latency_ms),
                backend: recorded.backend,
            });
        }
        let estimated_prompt = prompt_tokens(self.counter.as_ref(), &request.messages);
        self.limiter.acquire(estimated_prompt);

        let max_attempts = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let started_at = SystemTime::now();
            let clock = Instant::now();
            match self.backend.complete(request) {
                Ok(completion) => {
                    let latency = clock.elapsed();
                    if completion.content.is_empty() {
                        return Err(GatewayError::ProtocolError(
                            "response has empty content".into(),
                        ));
                    }
                    let usage = completion.usage.unwrap_or_else(|| Usage {
                        prompt_tokens: estimated_prompt,
                        completion_tokens: content_tokens(
                            self.counter.as_ref(),
                            &completion.content,
                        ),
                    });
                    let response = ChatResponse {
                        content: completion.content,
                        prompt_tokens: usage.prompt_tokens,
                        completion_tokens: usage.completion_tokens,
                        latency,
                        backend: self.backend.kind(),
                    };
                    self.meter
                        .record(response.prompt_tokens, response.completion_tokens);
                    if let Some(writer) = &self.transcript {
                        writer.append(&TranscriptRecord::new(
                            request,
                            &response,
                            unix_millis(started_at),
                            unix_millis(SystemTime::now()),
                        ))?;
                    }
                    return Ok(response);
                }
                Err(err) if err.is_retryable() && attempt < max_attempts => {
                    let delay = self.retry.backoff(attempt, rand::thread_rng().gen());
                    log::warn!(
                        "attempt {attempt}/{max_attempts} failed ({err}); retrying in {delay:?}"
                    );
                    thread::sleep(delay);
                }
                Err(GatewayError::RateLimited { .. }) => {
                    return Err(GatewayError::RateLimited { attempts: attempt })
                }
                Err(err) => return Err(err),
            }
        }
    }
}
