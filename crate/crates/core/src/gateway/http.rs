//! OpenAI-compatible HTTP backend: POST /v1/chat/completions and
//! /v1/embeddings, bearer credential from an environment variable.

use std::time::Duration;

use serde::Deserialize;

use super::{ChatBackend, ChatRequest, GatewayError};

pub struct HttpBackend {
    base_url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("client builds"),
        }
    }

    /// Read the credential from `env_var` (unset is allowed; some
    /// proxies are unauthenticated).
    pub fn from_env(base_url: impl Into<String>, env_var: &str) -> Self {
        Self::new(base_url, std::env::var(env_var).ok())
    }

    fn post(&self, path: &str, body: &serde_json::Value) -> Result<serde_json::Value, GatewayError> {
        let url = format!("{}{}", self.base_url, path);
        let mut builder = self.client.post(&url).json(body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| GatewayError::Transport {
            message: e.to_string(),
            retryable: true,
        })?;
        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(GatewayError::Auth);
        }
        if status.as_u16() == 429 {
            let retry_after_ms = response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse::<u64>().ok())
                .map(|secs| secs * 1000);
            return Err(GatewayError::RateLimited { retry_after_ms });
        }
        if status.is_server_error() {
            return Err(GatewayError::Transport {
                message: format!("HTTP {status}"),
                retryable: true,
            });
        }
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(GatewayError::Transport {
                message: format!("HTTP {status}: {body}"),
                retryable: false,
            });
        }
        response.json().map_err(|e| GatewayError::BadResponse(e.to_string()))
    }
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

impl ChatBackend for HttpBackend {
    fn raw_complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let mut messages = Vec::new();
        if let Some(system) = &req.system_text {
            messages.push(serde_json::json!({"role": "system", "content": system}));
        }
        messages.push(serde_json::json!({"role": "user", "content": req.user_text}));
        let mut body = serde_json::json!({
            "model": req.model_id,
            "messages": messages,
            "temperature": req.params.temperature,
            "top_p": req.params.nucleus_p,
            "max_tokens": req.params.max_tokens,
        });
        if let Some(seed) = req.params.seed {
            body["seed"] = serde_json::json!(seed);
        }
        if req.response_schema.is_some() {
            body["response_format"] = serde_json::json!({"type": "json_object"});
        }
        let value = self.post("/v1/chat/completions", &body)?;
        let completion: ChatCompletion = serde_json::from_value(value)
            .map_err(|e| GatewayError::BadResponse(format!("chat completion shape: {e}")))?;
        completion
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| GatewayError::BadResponse("no choices in completion".into()))
    }

    fn raw_embed(&self, model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let body = serde_json::json!({"model": model_id, "input": texts});
        let value = self.post("/v1/embeddings", &body)?;
        let parsed: EmbeddingResponse = serde_json::from_value(value)
            .map_err(|e| GatewayError::BadResponse(format!("embedding shape: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(GatewayError::BadResponse(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        let mut data = parsed.data;
        data.sort_by_key(|d| d.index);
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }
}
