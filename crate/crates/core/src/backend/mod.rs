//! Vision-language model clients.
//!
//! Every backend speaks one request shape ([`CompletionRequest`]): an image,
//! a text prompt, a temperature, an optional sampling seed, and an optional
//! list of answer tokens whose scores should be reported. The three
//! operations the rest of the crate needs ([`generate`], [`score_binary`],
//! [`sample_binary`]) are built on top of that single call, so the HTTP
//! client and the in-process mock behave identically.

mod config;
mod http;
mod mock;

use std::collections::BTreeMap;
use std::path::PathBuf;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{build_backend, RunConfig};
pub use http::{
    ChatChoice, ChatMessage, ChatRequest, ChatResponse, ContentPart, HttpBackend, ResponseMessage,
};
pub use mock::{MockBackend, MockReply, MockRule, MockScript};

pub const YES_TOKEN: &str = "Yes";
pub const NO_TOKEN: &str = "No";
pub const DEFAULT_SAMPLES: usize = 5;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid backend configuration: {0}")]
    InvalidSpec(String),
    #[error("backend `{backend}` cannot {operation}: capability is {capability:?}")]
    Capability {
        backend: String,
        operation: &'static str,
        capability: Capability,
    },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted {
        attempts: u32,
        #[source]
        last: Box<BackendError>,
    },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("empty completion")]
    EmptyCompletion,
    #[error("response has no score for token `{0}`")]
    MissingTokenScore(String),
    #[error("none of the {samples} samples parsed as yes or no")]
    IndeterminateAnswer { samples: usize },
    #[error("image `{reference}`: {reason}")]
    Image { reference: String, reason: String },
    #[error("mock script: {0}")]
    Script(String),
}

impl BackendError {
    /// Transient failures worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    /// Reports per-token scores for requested answer tokens.
    TokenScores,
    /// Only returns sampled text.
    SampleOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageTransport {
    /// Local files are inlined as base64; URLs are passed through.
    #[default]
    Base64,
    /// The image reference must already be a URL.
    Url,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
}

fn default_attempts() -> u32 {
    3
}
fn default_backoff() -> u64 {
    250
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: default_attempts(),
            backoff_base_ms: default_backoff(),
        }
    }
}

/// Declares one model endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub name: String,
    /// `http(s)://…` for a chat-completion server, `mock://<script.json>` for
    /// the scripted in-process backend.
    pub endpoint: String,
    /// Model identifier sent on the wire; defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token_env: Option<String>,
    pub capability: Capability,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub image_transport: ImageTransport,
    #[serde(default = "default_temperature")]
    pub sample_temperature: f64,
}

fn default_parallel() -> usize {
    4
}
fn default_timeout() -> f64 {
    60.0
}
fn default_temperature() -> f64 {
    1.0
}

impl BackendSpec {
    pub fn new(name: impl Into<String>, endpoint: impl Into<String>, capability: Capability) -> Self {
        Self {
            name: name.into(),
            endpoint: endpoint.into(),
            model: None,
            auth_token_env: None,
            capability,
            max_parallel: default_parallel(),
            timeout_secs: default_timeout(),
            retry: RetryPolicy::default(),
            image_transport: ImageTransport::default(),
            sample_temperature: default_temperature(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::InvalidSpec(format!("{}: {m}", self.name)));
        if self.name.is_empty() {
            return Err(BackendError::InvalidSpec("backend name must not be empty".into()));
        }
        if self.max_parallel < 1 {
            return bad("max_parallel must be at least 1".into());
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad(format!("timeout_secs must be positive, got {}", self.timeout_secs));
        }
        if self.retry.max_attempts < 1 {
            return bad("retry.max_attempts must be at least 1".into());
        }
        if !(self.sample_temperature.is_finite() && self.sample_temperature >= 0.0) {
            return bad("sample_temperature must be non-negative".into());
        }
        Ok(())
    }

    pub fn wire_model(&self) -> &str {
        self.model.as_deref().unwrap_or(&self.name)
    }
}

/// Where an image lives: a URL or a local path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl ImageRef {
    pub fn new(reference: impl Into<String>) -> Self {
        Self(reference.into())
    }

    pub fn is_url(&self) -> bool {
        self.0.starts_with("http://") || self.0.starts_with("https://") || self.0.starts_with("data:")
    }

    /// Resolves the reference into the JSON image part sent on the wire.
    pub fn to_wire(&self, transport: ImageTransport) -> Result<serde_json::Value, BackendError> {
        if self.is_url() {
            return Ok(serde_json::json!({ "url": self.0 }));
        }
        match transport {
            ImageTransport::Url => Err(BackendError::Image {
                reference: self.0.clone(),
                reason: "endpoint expects image URLs but the reference is a local path".into(),
            }),
            ImageTransport::Base64 => {
                let path = PathBuf::from(self.0.strip_prefix("file://").unwrap_or(&self.0));
                let bytes = std::fs::read(&path).map_err(|e| BackendError::Image {
                    reference: self.0.clone(),
                    reason: e.to_string(),
                })?;
                Ok(serde_json::json!({
                    "base64": base64::engine::general_purpose::STANDARD.encode(bytes)
                }))
            }
        }
    }
}

impl From<&str> for ImageRef {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub image: ImageRef,
    pub prompt: String,
    pub temperature: f64,
    pub seed: Option<u64>,
    /// Answer tokens whose scores should be reported; empty for plain text.
    pub score_tokens: Vec<String>,
}

impl CompletionRequest {
    pub fn greedy(image: &ImageRef, prompt: &str) -> Self {
        Self {
            image: image.clone(),
            prompt: prompt.to_string(),
            temperature: 0.0,
            seed: None,
            score_tokens: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Completion {
    pub text: String,
    pub token_scores: Option<BTreeMap<String, f64>>,
}

/// A model endpoint. Implementations must be shareable across threads.
pub trait Backend: Send + Sync {
    fn spec(&self) -> &BackendSpec;

    /// Issues one completion call. Retries, if any, happen inside.
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError>;
}

/// Yes/No confidences from either token scores or vote counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryConfidence {
    pub conf_yes: f64,
    pub conf_no: f64,
    pub n_samples: usize,
}

impl BinaryConfidence {
    pub fn new(conf_yes: f64, conf_no: f64, n_samples: usize) -> Self {
        Self {
            conf_yes,
            conf_no,
            n_samples,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.conf_yes.is_finite() && self.conf_no.is_finite() && self.n_samples >= 1
    }
}

/// Greedy free-text completion, whitespace-trimmed.
pub fn generate(backend: &dyn Backend, image: &ImageRef, prompt: &str) -> Result<String, BackendError> {
    let completion = backend.complete(&CompletionRequest::greedy(image, prompt))?;
    let text = completion.text.trim();
    if text.is_empty() {
        return Err(BackendError::EmptyCompletion);
    }
    Ok(text.to_string())
}

/// Scores of the "Yes" and "No" answer tokens for one greedy query.
pub fn score_binary(
    backend: &dyn Backend,
    image: &ImageRef,
    prompt: &str,
) -> Result<BinaryConfidence, BackendError> {
    let spec = backend.spec();
    if spec.capability != Capability::TokenScores {
        return Err(BackendError::Capability {
            backend: spec.name.clone(),
            operation: "report token scores",
            capability: spec.capability,
        });
    }
    let mut request = CompletionRequest::greedy(image, prompt);
    request.score_tokens = vec![YES_TOKEN.to_string(), NO_TOKEN.to_string()];
    let completion = backend.complete(&request)?;
    let scores = completion.token_scores.unwrap_or_default();
    let get = |token: &str| {
        scores
            .get(token)
            .copied()
            .filter(|s| s.is_finite())
            .ok_or_else(|| BackendError::MissingTokenScore(token.to_string()))
    };
    Ok(BinaryConfidence::new(get(YES_TOKEN)?, get(NO_TOKEN)?, 1))
}

/// Parsed leading answer of a sampled completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampledAnswer {
    Yes,
    No,
    Unparseable,
}

/// Case-insensitive leading "yes"/"no" match; the word must end there, so
/// "Nothing" or "Yesterday" do not count.
pub fn parse_answer(text: &str) -> SampledAnswer {
    let t = text.trim_start().trim_start_matches(|c: char| matches!(c, '"' | '\'' | '*' | '`'));
    let word: String = t.chars().take_while(|c| c.is_alphanumeric()).collect();
    match word.to_lowercase().as_str() {
        "yes" => SampledAnswer::Yes,
        "no" => SampledAnswer::No,
        _ => SampledAnswer::Unparseable,
    }
}

/// Draws `k` completions at the backend's sampling temperature and counts
/// Yes and No answers. Sample `i` uses seed `seed + i`.
pub fn sample_binary(
    backend: &dyn Backend,
    image: &ImageRef,
    prompt: &str,
    k: usize,
    seed: u64,
) -> Result<BinaryConfidence, BackendError> {
    if k == 0 {
        return Err(BackendError::InvalidSpec("sample count must be at least 1".into()));
    }
    let temperature = backend.spec().sample_temperature;
    let (mut yes, mut no) = (0usize, 0usize);
    for i in 0..k {
        let request = CompletionRequest {
            image: image.clone(),
            prompt: prompt.to_string(),
            temperature,
            seed: Some(seed.wrapping_add(i as u64)),
            score_tokens: Vec::new(),
        };
        match parse_answer(&backend.complete(&request)?.text) {
            SampledAnswer::Yes => yes += 1,
            SampledAnswer::No => no += 1,
            SampledAnswer::Unparseable => {}
        }
    }
    if yes + no == 0 {
        return Err(BackendError::IndeterminateAnswer { samples: k });
    }
    Ok(BinaryConfidence::new(yes as f64, no as f64, k))
}

/// Dispatches on capability: token scores when available, otherwise
/// [`DEFAULT_SAMPLES`] votes.
pub fn binary_confidence(
    backend: &dyn Backend,
    image: &ImageRef,
    prompt: &str,
    seed: u64,
) -> Result<BinaryConfidence, BackendError> {
    match backend.spec().capability {
        Capability::TokenScores => score_binary(backend, image, prompt),
        Capability::SampleOnly => sample_binary(backend, image, prompt, DEFAULT_SAMPLES, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scripted(capability: Capability, reply: MockReply) -> MockBackend {
        MockBackend::new("m", capability, MockScript::default().with_default(reply))
    }

    #[test]
    fn generate_trims_and_rejects_empty() {
        let m = scripted(Capability::TokenScores, MockReply::text("  Yes \n"));
        assert_eq!(generate(&m, &"img".into(), "q").unwrap(), "Yes");
        let empty = scripted(Capability::TokenScores, MockReply::text("   "));
        assert!(matches!(
            generate(&empty, &"img".into(), "q"),
            Err(BackendError::EmptyCompletion)
        ));
    }

    #[test]
    fn score_binary_passthrough() {
        let m = scripted(Capability::TokenScores, MockReply::scores(-0.1, -2.3));
        assert_eq!(
            score_binary(&m, &"img".into(), "q").unwrap(),
            BinaryConfidence::new(-0.1, -2.3, 1)
        );
        let eq = scripted(Capability::TokenScores, MockReply::scores(-0.7, -0.7));
        assert_eq!(
            score_binary(&eq, &"img".into(), "q").unwrap(),
            BinaryConfidence::new(-0.7, -0.7, 1)
        );
    }

    #[test]
    fn score_binary_requires_capability_and_tokens() {
        let m = scripted(Capability::SampleOnly, MockReply::scores(0.0, 0.0));
        assert!(matches!(
            score_binary(&m, &"img".into(), "q"),
            Err(BackendError::Capability { .. })
        ));
        let no_scores = scripted(Capability::TokenScores, MockReply::text("Yes"));
        assert!(matches!(
            score_binary(&no_scores, &"img".into(), "q"),
            Err(BackendError::MissingTokenScore(t)) if t == "Yes"
        ));
    }

    #[test]
    fn five_sample_votes() {
        let m = scripted(
            Capability::SampleOnly,
            MockReply::samples(["Yes", "Yes", "No", "Yes", "Yes"]),
        );
        assert_eq!(
            sample_binary(&m, &"img".into(), "q", 5, 0).unwrap(),
            BinaryConfidence::new(4.0, 1.0, 5)
        );
        let all = scripted(Capability::SampleOnly, MockReply::samples(["yes."]));
        assert_eq!(
            sample_binary(&all, &"img".into(), "q", 5, 0).unwrap(),
            BinaryConfidence::new(5.0, 0.0, 5)
        );
        let maybe = scripted(Capability::SampleOnly, MockReply::samples(["maybe"]));
        assert!(matches!(
            sample_binary(&maybe, &"img".into(), "q", 5, 0),
            Err(BackendError::IndeterminateAnswer { samples: 5 })
        ));
    }

    #[test]
    fn vote_counts_never_exceed_samples() {
        let m = scripted(
            Capability::SampleOnly,
            MockReply::samples(["Yes", "nothing", "No", "Nope", "yes!", "NO"]),
        );
        for k in 1..12 {
            let c = sample_binary(&m, &"img".into(), "q", k, 3).unwrap_or(BinaryConfidence::new(0.0, 0.0, k));
            assert!(c.conf_yes + c.conf_no <= c.n_samples as f64);
        }
    }

    #[test]
    fn answer_parsing() {
        assert_eq!(parse_answer("Yes"), SampledAnswer::Yes);
        assert_eq!(parse_answer("  no, it does not"), SampledAnswer::No);
        assert_eq!(parse_answer("YES."), SampledAnswer::Yes);
        assert_eq!(parse_answer("\"No\""), SampledAnswer::No);
        assert_eq!(parse_answer("Nothing"), SampledAnswer::Unparseable);
        assert_eq!(parse_answer("Yesterday"), SampledAnswer::Unparseable);
        assert_eq!(parse_answer(""), SampledAnswer::Unparseable);
    }

    #[test]
    fn spec_validation() {
        let mut s = BackendSpec::new("b", "http://x", Capability::TokenScores);
        assert!(s.validate().is_ok());
        s.max_parallel = 0;
        assert!(s.validate().is_err());
        s.max_parallel = 1;
        s.timeout_secs = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn image_wire_forms() {
        let url = ImageRef::new("https://example.org/a.jpg");
        assert_eq!(
            url.to_wire(ImageTransport::Url).unwrap(),
            serde_json::json!({"url": "https://example.org/a.jpg"})
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.bin");
        std::fs::write(&path, b"abc").unwrap();
        let local = ImageRef::new(path.to_str().unwrap());
        assert_eq!(
            local.to_wire(ImageTransport::Base64).unwrap(),
            serde_json::json!({"base64": "YWJj"})
        );
        assert!(local.to_wire(ImageTransport::Url).is_err());
        assert!(ImageRef::new("/no/such/file").to_wire(ImageTransport::Base64).is_err());
    }
}
