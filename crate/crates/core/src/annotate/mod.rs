//! Annotation collection: sentence-factuality and critique-review tasks,
//! rater submissions, a journaled store, and the HTTP service in front of it.

mod service;
mod store;

use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classify::CaptionJudgment;
use crate::corpus::{AggregatedLabel, CorpusError, RaterJudgment, RaterLabel, SentenceSpan};

pub use service::{router, serve, ServeOptions, TOKEN_ENV};
pub use store::{Store, StoreOptions};

/// Raters per task unless configured otherwise.
pub const DEFAULT_REQUIRED_RATERS: usize = 5;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("invalid `{field}`: {reason}")]
    Validation { field: &'static str, reason: String },
    #[error("task `{0}` is already complete")]
    TaskComplete(String),
    #[error("critique-review tasks need a judgments file with critiques")]
    MissingCritiques,
    #[error("caption `{0}` is not in the corpus")]
    UnknownCaption(String),
    #[error("journal line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("store I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl AnnotateError {
    fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        AnnotateError::Validation {
            field,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "sentence")]
    SentenceFactuality,
    #[serde(rename = "critique")]
    CritiqueReview,
}

impl TaskKind {
    pub const ALL: [TaskKind; 2] = [TaskKind::SentenceFactuality, TaskKind::CritiqueReview];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::SentenceFactuality => "sentence",
            TaskKind::CritiqueReview => "critique",
        }
    }
}

impl FromStr for TaskKind {
    type Err = AnnotateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sentence" => Ok(TaskKind::SentenceFactuality),
            "critique" => Ok(TaskKind::CritiqueReview),
            other => Err(AnnotateError::invalid("kind", format!("expected sentence or critique, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Open,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CritiquePayload {
    pub critic: String,
    pub critique: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub kind: TaskKind,
    pub caption_id: String,
    pub sentence_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<CritiquePayload>,
    pub required_raters: usize,
    pub status: TaskStatus,
}

/// Hex SHA-256 over kind, caption, sentence and critic; stable across runs so
/// repeated task creation is idempotent.
pub fn task_id(kind: TaskKind, caption_id: &str, sentence_index: usize, critic: Option<&str>) -> String {
    let mut h = Sha256::new();
    for part in [kind.as_str(), caption_id, &sentence_index.to_string(), critic.unwrap_or("")] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    hex::encode(&h.finalize()[..12])
}

/// Answer to a sentence-factuality task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactualityAnswer {
    pub claims_about_image: bool,
    pub label: RaterLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

/// Answer to a critique-review task: does the critique accurately and
/// relevantly identify the error?
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CritiqueAnswer {
    pub critique_correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SubmissionBody {
    Factuality(FactualityAnswer),
    Critique(CritiqueAnswer),
}

impl SubmissionBody {
    pub fn kind(&self) -> TaskKind {
        match self {
            SubmissionBody::Factuality(_) => TaskKind::SentenceFactuality,
            SubmissionBody::Critique(_) => TaskKind::CritiqueReview,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Submission {
    /// Taken from the URL when posted over HTTP.
    #[serde(default)]
    pub task_id: String,
    pub rater_id: String,
    /// Assigned by the store when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submitted_at: Option<DateTime<Utc>>,
    pub body: SubmissionBody,
}

impl Submission {
    pub fn factuality(task_id: &str, rater_id: &str, answer: FactualityAnswer) -> Self {
        Self {
            task_id: task_id.into(),
            rater_id: rater_id.into(),
            submitted_at: None,
            body: SubmissionBody::Factuality(answer),
        }
    }

    pub fn critique(task_id: &str, rater_id: &str, correct: bool) -> Self {
        Self {
            task_id: task_id.into(),
            rater_id: rater_id.into(),
            submitted_at: None,
            body: SubmissionBody::Critique(CritiqueAnswer {
                critique_correct: correct,
            }),
        }
    }

    /// The submission as a corpus judgment for `sentence_index`; `None` for
    /// critique reviews.
    pub fn to_rater_judgment(&self, sentence_index: usize) -> Option<RaterJudgment> {
        match &self.body {
            SubmissionBody::Factuality(a) => Some(RaterJudgment {
                rater_id: self.rater_id.clone(),
                sentence_index,
                claims_about_image: a.claims_about_image,
                label: a.label,
                rationale: a.rationale.clone(),
            }),
            SubmissionBody::Critique(_) => None,
        }
    }
}

/// Outcome of a complete critique-review task: the critique counts as
/// correct on a strict majority of positive reviews.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CritiqueOutcome {
    pub positive: usize,
    pub negative: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskAggregate {
    Factuality(AggregatedLabel),
    Critique(CritiqueOutcome),
}

/// Task plus what a rater needs to see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    #[serde(flatten)]
    pub task: AnnotationTask,
    pub image_ref: String,
    pub text: String,
    pub span: SentenceSpan,
    pub sentence: String,
    pub submission_count: usize,
}

/// Task state as reported by the API. Submission bodies stay hidden until
/// the task is complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDetail {
    #[serde(flatten)]
    pub view: TaskView,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submissions: Option<Vec<Submission>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<TaskAggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub task_id: String,
    pub rater_id: String,
    pub seq: u64,
    /// The rater had already submitted and this replaced the earlier answer.
    pub replaced: bool,
    pub distinct_raters: usize,
    pub status: TaskStatus,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindProgress {
    pub open: usize,
    pub complete: usize,
}

/// Critic model name and its judgments, the source of critique-review tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticJudgments {
    pub critic: String,
    pub judgments: Vec<CaptionJudgment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreateOptions<'a> {
    pub required_raters: usize,
    /// Required for critique-review tasks.
    pub critiques: Option<&'a [CriticJudgments]>,
}

impl Default for CreateOptions<'_> {
    fn default() -> Self {
        Self {
            required_raters: DEFAULT_REQUIRED_RATERS,
            critiques: None,
        }
    }
}

/// One row of the critique-review export: share of a critic's critiques that
/// reviewers judged correct, over complete tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CritiqueExportRow {
    pub critic: String,
    pub complete_tasks: usize,
    pub judged_correct: usize,
    pub pct_correct: Option<f64>,
}
