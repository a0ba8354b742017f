//! Scripted in-process backend.
//!
//! A script is an ordered list of rules. The first rule whose substrings all
//! occur in the prompt supplies the reply; otherwise the default reply is
//! used. Replies are pure functions of `(prompt, seed, temperature)`, so runs
//! repeat byte-for-byte.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    Backend, BackendError, BackendSpec, Capability, Completion, CompletionRequest, NO_TOKEN,
    YES_TOKEN,
};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockReply {
    /// Greedy text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// `[yes, no]` token scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<[f64; 2]>,
    /// Sampled texts; sample `seed` gets entry `seed % len`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<String>,
    /// Fail the call with this message instead of replying.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MockReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: Some(text.into()),
            ..Self::default()
        }
    }

    pub fn scores(yes: f64, no: f64) -> Self {
        Self {
            scores: Some([yes, no]),
            ..Self::default()
        }
    }

    pub fn samples<S: Into<String>>(samples: impl IntoIterator<Item = S>) -> Self {
        Self {
            samples: samples.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self {
            error: Some(message.into()),
            ..Self::default()
        }
    }

    /// A verdict usable by both scoring modes: clear token scores plus five
    /// unanimous samples.
    pub fn verdict(accurate: bool) -> Self {
        let (yes, no) = if accurate { (-0.05, -3.0) } else { (-3.0, -0.05) };
        let word = if accurate { "Yes" } else { "No" };
        Self {
            text: Some(word.to_string()),
            scores: Some([yes, no]),
            samples: vec![word.to_string(); 5],
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    pub contains: Vec<String>,
    pub reply: MockReply,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<MockReply>,
}

/// Marker substrings of the three prompt templates.
const CLASSIFY_MARK: &str = "does the following text align with the image";
const CRITIQUE_MARK: &str = "is considered inaccurate";

impl MockScript {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw).map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))
    }

    pub fn rule<S: Into<String>>(mut self, contains: impl IntoIterator<Item = S>, reply: MockReply) -> Self {
        self.rules.push(MockRule {
            contains: contains.into_iter().map(Into::into).collect(),
            reply,
        });
        self
    }

    pub fn with_default(mut self, reply: MockReply) -> Self {
        self.default = Some(reply);
        self
    }

    /// Classification reply for the sentence `target`.
    pub fn classify(self, target: &str, accurate: bool) -> Self {
        self.rule(
            [CLASSIFY_MARK.to_string(), format!("<TARGET>{target}</TARGET>")],
            MockReply::verdict(accurate),
        )
    }

    /// Classification reply for `target` seen after exactly `prefix`.
    pub fn classify_in_context(self, prefix: &str, target: &str, accurate: bool) -> Self {
        self.rule(
            [
                CLASSIFY_MARK.to_string(),
                format!("<PREFIX>{prefix}</PREFIX>"),
                format!("<TARGET>{target}</TARGET>"),
            ],
            MockReply::verdict(accurate),
        )
    }

    pub fn critique(self, target: &str, critique: &str) -> Self {
        self.rule(
            [CRITIQUE_MARK.to_string(), format!("<TARGET>{target}</TARGET>")],
            MockReply::text(critique),
        )
    }

    /// Reviser reply for the revision instruction about `original`.
    pub fn revise(self, original: &str, revised: &str) -> Self {
        self.rule([format!("Original sentence: {original}\n")], MockReply::text(revised))
    }

    fn lookup(&self, prompt: &str) -> Option<&MockReply> {
        self.rules
            .iter()
            .find(|r| r.contains.iter().all(|s| prompt.contains(s.as_str())))
            .map(|r| &r.reply)
            .or(self.default.as_ref())
    }
}

/// Calls observed by a [`MockBackend`], in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedCall {
    pub prompt: String,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub wants_scores: bool,
}

pub struct MockBackend {
    spec: BackendSpec,
    script: MockScript,
    calls: Mutex<Vec<RecordedCall>>,
}

impl MockBackend {
    pub fn new(name: &str, capability: Capability, script: MockScript) -> Self {
        Self::with_spec(BackendSpec::new(name, "mock://inline", capability), script)
    }

    pub fn with_spec(spec: BackendSpec, script: MockScript) -> Self {
        Self {
            spec,
            script,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.calls.lock().unwrap().clone()
    }
}

impl Backend for MockBackend {
    fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        self.calls.lock().unwrap().push(RecordedCall {
            prompt: request.prompt.clone(),
            temperature: request.temperature,
            seed: request.seed,
            wants_scores: !request.score_tokens.is_empty(),
        });
        let reply = self.script.lookup(&request.prompt).ok_or_else(|| {
            let head: String = request.prompt.chars().take(80).collect();
            BackendError::Script(format!("no rule matches prompt `{head}…`"))
        })?;
        if let Some(message) = &reply.error {
            return Err(BackendError::Transport(message.clone()));
        }

        let sampled = request.temperature > 0.0 && !reply.samples.is_empty();
        let text = if sampled {
            let i = request.seed.unwrap_or(0) as usize % reply.samples.len();
            reply.samples[i].clone()
        } else if let Some(text) = &reply.text {
            text.clone()
        } else if let Some(first) = reply.samples.first() {
            first.clone()
        } else if let Some([yes, no]) = reply.scores {
            if yes > no { YES_TOKEN } else { NO_TOKEN }.to_string()
        } else {
            String::new()
        };

        let token_scores = match (request.score_tokens.is_empty(), reply.scores) {
            (false, Some([yes, no])) if self.spec.capability == Capability::TokenScores => {
                let mut m = BTreeMap::new();
                m.insert(YES_TOKEN.to_string(), yes);
                m.insert(NO_TOKEN.to_string(), no);
                Some(m)
            }
            _ => None,
        };
        Ok(Completion { text, token_scores })
    }
}
