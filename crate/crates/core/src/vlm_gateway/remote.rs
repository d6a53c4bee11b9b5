//! OpenAI-compatible chat-completion client.

use async_trait::async_trait;
use serde_json::{json, Value};

use super::{Backend, BackendConfig, BackendKind, CallError, GatewayError, InferenceRequest, DEFAULT_ENDPOINT};

#[derive(Debug, Clone)]
pub struct RemoteChat {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    api_key_ref: String,
    temperature: f64,
}

impl RemoteChat {
    /// The key is read from the environment variable named in the config;
    /// a missing key surfaces as an authentication failure on first use.
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, GatewayError> {
        let endpoint = cfg.endpoint_url.clone().unwrap_or_else(|| DEFAULT_ENDPOINT.to_string());
        reqwest::Url::parse(&endpoint)
            .map_err(|e| GatewayError::InvalidConfig(format!("endpoint {endpoint:?}: {e}")))?;
        let client = reqwest::Client::builder()
            .build()
            .map_err(|e| GatewayError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            client,
            endpoint,
            model: cfg.model_name.clone(),
            api_key: std::env::var(&cfg.api_key_ref).ok().filter(|k| !k.is_empty()),
            api_key_ref: cfg.api_key_ref.clone(),
            temperature: cfg.temperature,
        })
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    fn payload(&self, request: &InferenceRequest) -> Value {
        json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": request.messages(),
        })
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(200).collect()
}

/// `choices[0].message.content` of a chat-completion response.
fn extract_content(body: &Value) -> Option<String> {
    let content = body.get("choices")?.get(0)?.get("message")?.get("content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        // some servers return content parts
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

#[async_trait]
impl Backend for RemoteChat {
    fn kind(&self) -> BackendKind {
        BackendKind::RemoteChat
    }

    async fn call(&self, request: &InferenceRequest) -> Result<String, CallError> {
        let key = self
            .api_key
            .as_deref()
            .ok_or_else(|| CallError::Auth(format!("environment variable {} is not set", self.api_key_ref)))?;
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(key)
            .json(&self.payload(request))
            .send()
            .await
            .map_err(|e| if e.is_timeout() { CallError::Timeout } else { CallError::Transport(e.to_string()) })?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .await
            .map_err(|e| CallError::Transport(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(CallError::Auth(format!("{status}: {}", snippet(&text)))),
            429 => return Err(CallError::RateLimited),
            500..=599 => return Err(CallError::Server(status, snippet(&text))),
            _ => return Err(CallError::Rejected(status, snippet(&text))),
        }
        let body: Value = serde_json::from_str(&text)
            .map_err(|e| CallError::Server(status, format!("response is not JSON: {e}")))?;
        extract_content(&body).ok_or_else(|| CallError::Server(status, "response has no message content".into()))
    }
}
