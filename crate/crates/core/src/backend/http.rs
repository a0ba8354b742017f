//! Blocking JSON chat-completion client with retries and a per-backend
//! concurrency limit. Field names are documented in `docs/wire-protocol.md`.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendSpec, Completion, CompletionRequest};
use crate::pool::Semaphore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub score_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: Vec<ContentPart>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Image { image: serde_json::Value },
    Text { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatChoice {
    pub message: ResponseMessage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_scores: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseMessage {
    #[serde(default)]
    pub role: Option<String>,
    pub content: String,
}

impl ChatRequest {
    pub fn build(spec: &BackendSpec, request: &CompletionRequest) -> Result<Self, BackendError> {
        Ok(Self {
            model: spec.wire_model().to_string(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: vec![
                    ContentPart::Image {
                        image: request.image.to_wire(spec.image_transport)?,
                    },
                    ContentPart::Text {
                        text: request.prompt.clone(),
                    },
                ],
            }],
            temperature: request.temperature,
            seed: request.seed,
            score_tokens: request.score_tokens.clone(),
        })
    }

    /// The text part of the first message, if any.
    pub fn prompt(&self) -> Option<&str> {
        self.messages.first()?.content.iter().find_map(|p| match p {
            ContentPart::Text { text } => Some(text.as_str()),
            ContentPart::Image { .. } => None,
        })
    }
}

pub struct HttpBackend {
    spec: BackendSpec,
    client: reqwest::blocking::Client,
    token: Option<String>,
    limit: Semaphore,
}

impl HttpBackend {
    /// Reads the auth token from the environment now, so a missing variable
    /// fails at startup rather than mid-run.
    pub fn new(spec: BackendSpec) -> Result<Self, BackendError> {
        spec.validate()?;
        let token = match &spec.auth_token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::InvalidSpec(format!("{}: environment variable `{var}` is not set", spec.name))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(spec.timeout_secs))
            .build()
            .map_err(|e| BackendError::InvalidSpec(e.to_string()))?;
        let limit = Semaphore::new(spec.max_parallel);
        Ok(Self {
            spec,
            client,
            token,
            limit,
        })
    }

    fn attempt(&self, body: &ChatRequest) -> Result<Completion, BackendError> {
        let mut req = self.client.post(&self.spec.endpoint).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(BackendError::Http {
                status: status.as_u16(),
                body: body.chars().take(500).collect(),
            });
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
        Ok(Completion {
            text: choice.message.content,
            token_scores: choice.token_scores,
        })
    }
}

impl Backend for HttpBackend {
    fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let body = ChatRequest::build(&self.spec, request)?;
        let _permit = self.limit.acquire();
        let max = self.spec.retry.max_attempts;
        let mut attempt = 1;
        loop {
            match self.attempt(&body) {
                Ok(c) => return Ok(c),
                Err(e) if e.is_retryable() && attempt < max => {
                    let backoff = self.spec.retry.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                    std::thread::sleep(Duration::from_millis(backoff));
                    attempt += 1;
                }
                Err(e) if e.is_retryable() => {
                    return Err(BackendError::RetriesExhausted {
                        attempts: attempt,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}
