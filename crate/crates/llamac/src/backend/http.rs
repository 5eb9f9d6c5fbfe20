//! Live HTTP backend speaking the OpenAI-compatible chat-completion protocol.
//!
//! Configuration comes from the environment:
//! - `LLAMAC_API_BASE` — base URL, e.g. `http://localhost:8000/v1`
//! - `LLAMAC_API_KEY` — bearer token, optional for local servers
//! - `LLAMAC_MODEL` — model name sent with each request
//!
//! Transport failures are retried a bounded number of times before the error
//! propagates.

use std::time::Instant;

use serde_json::{json, Value};

use crate::backend::{
    BackendError, BackendResponse, ChatBackend, CompletionRequest, TokenUsage,
};

pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: String,
    model: String,
    max_retries: u32,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            agent: ureq::Agent::new_with_defaults(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            model: model.into(),
            max_retries: 2,
        }
    }

    pub fn from_env() -> Result<Self, BackendError> {
        let base_url = std::env::var("LLAMAC_API_BASE")
            .map_err(|_| BackendError::Config("LLAMAC_API_BASE is not set".into()))?;
        let api_key = std::env::var("LLAMAC_API_KEY").unwrap_or_default();
        let model = std::env::var("LLAMAC_MODEL")
            .map_err(|_| BackendError::Config("LLAMAC_MODEL is not set".into()))?;
        Ok(Self::new(base_url, api_key, model))
    }

    fn payload(&self, request: &CompletionRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.speaker.as_str() {
                    "system" => "system",
                    "assistant" => "assistant",
                    _ => "user",
                };
                json!({"role": role, "content": m.text})
            })
            .collect();
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_tokens,
        });
        if let Some(seed) = request.params.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

impl ChatBackend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn complete_raw(&self, request: &CompletionRequest) -> Result<BackendResponse, BackendError> {
        let url = format!("{}/chat/completions", self.base_url);
        let payload = self.payload(request);
        let started = Instant::now();
        let mut last_error = String::new();
        for attempt in 0..=self.max_retries {
            let mut call = self.agent.post(&url);
            if !self.api_key.is_empty() {
                call = call.header("authorization", &format!("Bearer {}", self.api_key));
            }
            match call.send_json(&payload) {
                Ok(mut response) => {
                    let body: Value = response.body_mut().read_json().map_err(|e| {
                        BackendError::Transport {
                            attempts: attempt + 1,
                            message: format!("bad response body: {e}"),
                        }
                    })?;
                    let text = body["choices"][0]["message"]["content"]
                        .as_str()
                        .unwrap_or_default()
                        .to_string();
                    let usage = body.get("usage").map(|u| {
                        TokenUsage {
                            prompt_tokens: u["prompt_tokens"].as_u64().unwrap_or(0),
                            completion_tokens: u["completion_tokens"].as_u64().unwrap_or(0),
                            total_tokens: u["total_tokens"].as_u64().unwrap_or(0),
                        }
                    });
                    return Ok(BackendResponse {
                        text,
                        usage,
                        latency_ms: started.elapsed().as_millis() as u64,
                    });
                }
                Err(e) => {
                    last_error = e.to_string();
                }
            }
        }
        Err(BackendError::Transport {
            attempts: self.max_retries + 1,
            message: last_error,
        })
    }
}
