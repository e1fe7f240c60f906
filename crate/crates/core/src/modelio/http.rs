use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{EndpointConfig, Protocol};
use crate::promptgen::PromptBundle;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    Io(String),
}

/// Minimal JSON-over-HTTP POST.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> UreqTransport {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        UreqTransport { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        _timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        let mut req = self.agent.post(url);
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let mut resp = req.send_json(body).map_err(map_err)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(map_err)?;
        Ok(HttpResponse { status, body })
    }
}

fn map_err(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        other => TransportError::Io(other.to_string()),
    }
}

pub(crate) fn endpoint_url(cfg: &EndpointConfig) -> String {
    let base = cfg.base_url.trim_end_matches('/');
    match cfg.protocol {
        Protocol::OpenaiChat => format!("{base}/chat/completions"),
        Protocol::AnthropicMessages => format!("{base}/messages"),
        Protocol::Mock => base.to_string(),
    }
}

pub(crate) fn headers(cfg: &EndpointConfig, key: Option<&str>) -> Vec<(String, String)> {
    let mut h = vec![("content-type".to_string(), "application/json".to_string())];
    match (cfg.protocol, key) {
        (Protocol::OpenaiChat, Some(k)) => h.push(("authorization".into(), format!("Bearer {k}"))),
        (Protocol::AnthropicMessages, k) => {
            if let Some(k) = k {
                h.push(("x-api-key".into(), k.to_string()));
            }
            h.push(("anthropic-version".into(), "2023-06-01".into()));
        }
        _ => {}
    }
    h
}

pub(crate) fn request_body(cfg: &EndpointConfig, bundle: &PromptBundle) -> Value {
    let b64 = |bytes: &[u8]| base64::engine::general_purpose::STANDARD.encode(bytes);
    match cfg.protocol {
        Protocol::AnthropicMessages => {
            let mut content = Vec::new();
            if let Some(img) = &bundle.image {
                content.push(json!({
                    "type": "image",
                    "source": {"type": "base64", "media_type": img.media_type, "data": b64(&img.bytes)},
                }));
            }
            content.push(json!({"type": "text", "text": bundle.user_text}));
            json!({
                "model": cfg.model,
                "max_tokens": cfg.max_tokens,
                "temperature": cfg.temperature,
                "messages": [{"role": "user", "content": content}],
            })
        }
        _ => {
            let mut content = vec![json!({"type": "text", "text": bundle.user_text})];
            if let Some(img) = &bundle.image {
                let url = format!("data:{};base64,{}", img.media_type, b64(&img.bytes));
                content.push(json!({"type": "image_url", "image_url": {"url": url}}));
            }
            json!({
                "model": cfg.model,
                "max_tokens": cfg.max_tokens,
                "temperature": cfg.temperature,
                "messages": [{"role": "user", "content": content}],
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Decoded {
    pub text: String,
    pub finish_reason: String,
    pub usage: Option<Value>,
}

pub(crate) fn decode_response(protocol: Protocol, body: &str) -> Result<Decoded, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("response is not JSON: {e}"))?;
    match protocol {
        Protocol::AnthropicMessages => {
            let blocks = v["content"].as_array().ok_or("missing content array")?;
            let text: String = blocks
                .iter()
                .filter(|b| b["type"] == "text")
                .filter_map(|b| b["text"].as_str())
                .collect::<Vec<_>>()
                .join("");
            Ok(Decoded {
                text,
                finish_reason: v["stop_reason"].as_str().unwrap_or("unknown").to_string(),
                usage: v.get("usage").cloned(),
            })
        }
        _ => {
            let choice = v["choices"].get(0).ok_or("missing choices[0]")?;
            let content = &choice["message"]["content"];
            let text = match content {
                Value::String(s) => s.clone(),
                Value::Array(parts) => parts.iter().filter_map(|p| p["text"].as_str()).collect(),
                Value::Null => String::new(),
                _ => return Err("unexpected message content".into()),
            };
            Ok(Decoded {
                text,
                finish_reason: choice["finish_reason"].as_str().unwrap_or("unknown").to_string(),
                usage: v.get("usage").cloned(),
            })
        }
    }
}
