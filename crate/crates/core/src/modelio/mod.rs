//! Chat-completion clients with image support and a seeded mock respondent.

mod http;
mod limiter;
mod mock;

use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::NewsItem;
use crate::parse::{extract_rating, Rating};
use crate::promptgen::{Modality, PromptBundle};

pub use http::{HttpResponse, Transport, TransportError, UreqTransport};
pub use limiter::{Limiter, Permit};
pub use mock::{mock_respond, MockPolicy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelIoError {
    #[error("endpoint {endpoint}: {message}")]
    Config { endpoint: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    OpenaiChat,
    AnthropicMessages,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            backoff_base_ms: 500,
        }
    }
}

fn default_temperature() -> f64 {
    0.9
}
fn default_max_tokens() -> u32 {
    1024
}
fn default_m() -> u32 {
    10
}
fn default_parallel() -> usize {
    4
}
fn default_timeout() -> u64 {
    120_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub name: String,
    #[serde(default)]
    pub base_url: String,
    pub protocol: Protocol,
    /// Model identifier sent on the wire; defaults to `name`.
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_m")]
    pub completions_per_item: u32,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub mock: Option<MockPolicy>,
}

impl EndpointConfig {
    pub fn mock(name: &str, policy: MockPolicy) -> EndpointConfig {
        EndpointConfig {
            name: name.to_string(),
            base_url: String::new(),
            protocol: Protocol::Mock,
            model: name.to_string(),
            auth_env: None,
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            completions_per_item: default_m(),
            max_parallel: default_parallel(),
            retry: RetryPolicy::default(),
            timeout_ms: default_timeout(),
            mock: Some(policy),
        }
    }

    pub fn model_id(&self) -> &str {
        if self.model.is_empty() {
            &self.name
        } else {
            &self.model
        }
    }

    pub fn validate(&self) -> Result<(), ModelIoError> {
        let fail = |message: String| {
            Err(ModelIoError::Config {
                endpoint: self.name.clone(),
                message,
            })
        };
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return fail("name must be non-empty and path-safe".into());
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return fail(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.completions_per_item < 1 {
            return fail("completions_per_item must be at least 1".into());
        }
        if self.max_parallel < 1 {
            return fail("max_parallel must be at least 1".into());
        }
        if self.retry.max_attempts < 1 {
            return fail("retry.max_attempts must be at least 1".into());
        }
        match self.protocol {
            Protocol::Mock => {
                if let Some(p) = &self.mock {
                    p.validate().or_else(fail)?;
                }
            }
            _ => {
                if self.base_url.is_empty() {
                    return fail("base_url is required for remote endpoints".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordKey {
    pub model: String,
    pub condition_label: String,
    pub news_id: String,
    pub modality: Modality,
    pub sample_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub key: RecordKey,
    pub raw_text: String,
    pub rating: Rating,
    pub latency_ms: u64,
    pub attempts: u32,
    pub finish_reason: String,
    /// Millisecond precision, written at fixed width so that a record's byte
    /// length does not depend on when it was produced.
    #[serde(with = "millis_rfc3339")]
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<serde_json::Value>,
}

fn now_millis() -> DateTime<Utc> {
    Utc::now().trunc_subsecs(3)
}

mod millis_rfc3339 {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Millis, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub key: RecordKey,
    pub attempts: u32,
    pub error: String,
    /// Not worth retrying (4xx other than 408/429, undecodable body).
    pub permanent: bool,
}

pub type SampleOutcome = Result<CompletionRecord, SampleFailure>;

/// One endpoint with its credentials, transport and in-flight limit.
pub struct Client {
    cfg: EndpointConfig,
    api_key: Option<String>,
    transport: Arc<dyn Transport>,
    limiter: Arc<Limiter>,
}

impl Client {
    /// Validates the config and reads the API key; fails before any request
    /// when `auth_env` names an unset variable.
    pub fn new(cfg: EndpointConfig) -> Result<Client, ModelIoError> {
        let transport = Arc::new(UreqTransport::new(Duration::from_millis(cfg.timeout_ms)));
        Client::with_transport(cfg, transport)
    }

    pub fn with_transport(cfg: EndpointConfig, transport: Arc<dyn Transport>) -> Result<Client, ModelIoError> {
        cfg.validate()?;
        let api_key = match (&cfg.protocol, &cfg.auth_env) {
            (Protocol::Mock, _) | (_, None) => None,
            (_, Some(var)) => match std::env::var(var) {
                Ok(v) if !v.is_empty() => Some(v),
                _ => {
                    return Err(ModelIoError::Config {
                        endpoint: cfg.name.clone(),
                        message: format!("environment variable {var} is not set"),
                    })
                }
            },
        };
        let limiter = Arc::new(Limiter::new(cfg.max_parallel));
        Ok(Client {
            cfg,
            api_key,
            transport,
            limiter,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    pub fn limiter(&self) -> &Limiter {
        &self.limiter
    }

    /// All M samples for one prompt, issued concurrently under the
    /// endpoint's in-flight limit. Outcomes are in sample order.
    pub fn complete(&self, bundle: &PromptBundle, news: &NewsItem) -> Vec<SampleOutcome> {
        let m = self.cfg.completions_per_item;
        if self.cfg.protocol == Protocol::Mock {
            return (0..m).map(|k| Ok(self.mock_sample(bundle, news, k))).collect();
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..m)
                .map(|k| s.spawn(move || self.remote_sample(bundle, k)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("sample thread panicked")).collect()
        })
    }

    fn key(&self, bundle: &PromptBundle, k: u32) -> RecordKey {
        RecordKey {
            model: self.cfg.name.clone(),
            condition_label: bundle.meta.condition_label.clone(),
            news_id: bundle.meta.news_id.clone(),
            modality: bundle.meta.modality,
            sample_index: k,
        }
    }

    fn mock_sample(&self, bundle: &PromptBundle, news: &NewsItem, k: u32) -> CompletionRecord {
        let policy = self.cfg.mock.clone().unwrap_or_default();
        let raw_text = mock_respond(bundle, &policy, news, k);
        CompletionRecord {
            key: self.key(bundle, k),
            rating: extract_rating(&raw_text),
            raw_text,
            latency_ms: 0,
            attempts: 1,
            finish_reason: "stop".into(),
            created_at: now_millis(),
            usage: None,
        }
    }

    fn remote_sample(&self, bundle: &PromptBundle, k: u32) -> SampleOutcome {
        let key = self.key(bundle, k);
        let url = http::endpoint_url(&self.cfg);
        let headers = http::headers(&self.cfg, self.api_key.as_deref());
        let body = http::request_body(&self.cfg, bundle);
        let timeout = Duration::from_millis(self.cfg.timeout_ms);
        let mut attempts = 0;
        loop {
            attempts += 1;
            let started = Instant::now();
            let result = {
                let _permit = self.limiter.acquire();
                self.transport.post_json(&url, &headers, &body, timeout)
            };
            let latency_ms = started.elapsed().as_millis() as u64;
            let (error, retryable) = match result {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    return match http::decode_response(self.cfg.protocol, &resp.body) {
                        Ok(d) => Ok(CompletionRecord {
                            key,
                            rating: extract_rating(&d.text),
                            raw_text: d.text,
                            latency_ms,
                            attempts,
                            finish_reason: d.finish_reason,
                            created_at: now_millis(),
                            usage: d.usage,
                        }),
                        Err(e) => Err(SampleFailure {
                            key,
                            attempts,
                            error: e,
                            permanent: true,
                        }),
                    };
                }
                Ok(resp) => {
                    let retryable = resp.status >= 500 || resp.status == 429 || resp.status == 408;
                    let snippet: String = resp.body.chars().take(200).collect();
                    (format!("HTTP {}: {snippet}", resp.status), retryable)
                }
                Err(TransportError::Timeout) => ("timeout".to_string(), true),
                Err(TransportError::Io(e)) => (e, true),
            };
            if !retryable || attempts >= self.cfg.retry.max_attempts {
                return Err(SampleFailure {
                    key,
                    attempts,
                    error,
                    permanent: !retryable,
                });
            }
            let backoff = self.cfg.retry.backoff_base_ms.saturating_mul(1 << (attempts - 1).min(16));
            std::thread::sleep(Duration::from_millis(backoff));
        }
    }
}

/// Convenience wrapper building a one-off client.
pub fn complete(
    bundle: &PromptBundle,
    endpoint: &EndpointConfig,
    news: &NewsItem,
) -> Result<Vec<SampleOutcome>, ModelIoError> {
    Ok(Client::new(endpoint.clone())?.complete(bundle, news))
}
