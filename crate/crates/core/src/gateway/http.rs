//! OpenAI-compatible chat-completions over HTTP.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendKind, ChatBackend, ChatRequest, Completion, GatewayError, Usage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// e.g. `https://api.openai.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 120,
        }
    }
}

pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
    calls: AtomicU64,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpBackend {
            agent,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key: api_key.into(),
            calls: AtomicU64::new(0),
        }
    }

    /// Reads the API key from the environment variable named in `config`.
    pub fn from_config(config: &HttpConfig) -> Result<Self, GatewayError> {
        let key = std::env::var(&config.api_key_env).map_err(|_| {
            GatewayError::AuthError(format!(
                "environment variable {} is not set",
                config.api_key_env
            ))
        })?;
        Ok(HttpBackend::new(
            &config.base_url,
            key,
            Duration::from_secs(config.timeout_secs),
        ))
    }
}

fn parse_body(body: &str) -> Result<Completion, GatewayError> {
    let protocol = |msg: &str| GatewayError::ProtocolError(msg.to_owned());
    let json: Value = serde_json::from_str(body).map_err(|e| protocol(&e.to_string()))?;
    let content = json
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| protocol("missing choices[0].message.content"))?;
    let token = |field: &str| {
        json.pointer(&format!("/usage/{field}"))
            .and_then(Value::as_u64)
            .ok_or_else(|| protocol(&format!("missing usage.{field}")))
    };
    Ok(Completion {
        content: content.to_owned(),
        usage: Some(Usage {
            prompt_tokens: token("prompt_tokens")?,
            completion_tokens: token("completion_tokens")?,
        }),
    })
}

impl ChatBackend for HttpBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Http
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let result = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(&request.wire_body()[..]);
        let mut response = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(GatewayError::Timeout),
            Err(e) => return Err(GatewayError::Transport(e.to_string())),
        };
        let status = response.status().as_u16();
        let body = response.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(_) => GatewayError::Timeout,
            other => GatewayError::Transport(other.to_string()),
        })?;
        match status {
            200..=299 => parse_body(&body),
            401 | 403 => Err(GatewayError::AuthError(body)),
            408 => Err(GatewayError::Timeout),
            429 => Err(GatewayError::RateLimited { attempts: 1 }),
            500..=599 => Err(GatewayError::Server { status, body }),
            _ => Err(GatewayError::ProtocolError(format!(
                "HTTP {status}: {body}"
            ))),
        }
    }

    fn network_calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_openai_body() {
        let body = r#"{"id":"x","choices":[{"index":0,"message":{"role":"assistant","content":"Answer 1:\nr\nyes"}}],"usage":{"prompt_tokens":120,"completion_tokens":30,"total_tokens":150}}"#;
        let c = parse_body(body).unwrap();
        assert_eq!(c.content, "Answer 1:\nr\nyes");
        assert_eq!(
            c.usage,
            Some(Usage {
                prompt_tokens: 120,
                completion_tokens: 30
            })
        );
    }

    #[test]
    fn missing_fields_are_protocol_errors() {
        assert!(matches!(
            parse_body(r#"{"choices":[]}"#),
            Err(GatewayError::ProtocolError(_))
        ));
        assert!(matches!(
            parse_body(r#"{"choices":[{"message":{"content":"x"}}]}"#),
            Err(GatewayError::ProtocolError(m)) if m.contains("usage")
        ));
        assert!(matches!(
            parse_body("not json"),
            Err(GatewayError::ProtocolError(_))
        ));
    }

    #[test]
    fn missing_key_is_auth_error() {
        let cfg = HttpConfig {
            api_key_env: "TABPREP_TEST_SURELY_UNSET_KEY".into(),
            ..HttpConfig::default()
        };
        assert!(matches!(
            HttpBackend::from_config(&cfg),
            Err(GatewayError::AuthError(_))
        ));
    }
}
