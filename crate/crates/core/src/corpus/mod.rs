//! Caption corpus data model, JSON Lines ingestion, vote aggregation and
//! per-model statistics.
//!
//! A corpus file holds one [`CaptionRecord`] per line. Each record carries the
//! paragraph text, the byte spans of its sentences, and any number of rater
//! judgments addressing those sentences.

mod aggregate;
mod stats;

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aggregate::{
    aggregate_corpus, aggregate_judgments, select_critique_target, AggregatedLabel,
    AggregatedMap, AggregatedVerdict, SentenceKey,
};
pub use stats::{corpus_stats, total_stats, unique_bigrams, ModelStats};

/// Tag literals that would break the prompt framing if they appeared inside a
/// sentence.
pub(crate) const RESERVED_TAGS: [&str; 2] = ["</TARGET>", "</PREFIX>"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("caption {caption_id}: invalid `{field}`: {reason}")]
    Invariant {
        caption_id: String,
        field: &'static str,
        reason: String,
    },
    #[error("cannot aggregate an empty judgment list")]
    NoJudgments,
    #[error("judgments address different sentences ({first} and {other})")]
    MixedSentences { first: usize, other: usize },
    #[error("no rationale to select a critique target from")]
    NoRationales,
    #[error("no records for model `{0}`")]
    UnknownModel(String),
    #[error("caption {caption_id}: sentence {sentence_index} has no aggregated label")]
    MissingLabel {
        caption_id: String,
        sentence_index: usize,
    },
}

/// Byte range of one sentence inside [`CaptionRecord::text`], end exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub start: usize,
    pub end: usize,
}

impl SentenceSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// One rater's answer for one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaterLabel {
    Entailment,
    Neutral,
    Contradiction,
    NothingToAssess,
}

impl RaterLabel {
    pub const ALL: [RaterLabel; 4] = [
        RaterLabel::Entailment,
        RaterLabel::Neutral,
        RaterLabel::Contradiction,
        RaterLabel::NothingToAssess,
    ];

    /// Neutral and Contradiction both count as non-entailment votes.
    pub fn is_non_entailment(self) -> bool {
        matches!(self, RaterLabel::Neutral | RaterLabel::Contradiction)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RaterLabel::Entailment => "entailment",
            RaterLabel::Neutral => "neutral",
            RaterLabel::Contradiction => "contradiction",
            RaterLabel::NothingToAssess => "nothing_to_assess",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaterJudgment {
    pub rater_id: String,
    pub sentence_index: usize,
    pub claims_about_image: bool,
    pub label: RaterLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

impl RaterJudgment {
    /// Checks the rationale rules: required for Neutral and Contradiction,
    /// forbidden for Entailment. Returns the offending field name on failure.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.rater_id.trim().is_empty() {
            return Err(("rater_id", "must not be empty".into()));
        }
        let has_rationale = self
            .rationale
            .as_deref()
            .is_some_and(|r| !r.trim().is_empty());
        match self.label {
            RaterLabel::Neutral | RaterLabel::Contradiction if !has_rationale => Err((
                "rationale",
                format!("required for label `{}`", self.label.as_str()),
            )),
            RaterLabel::Entailment if self.rationale.is_some() => Err((
                "rationale",
                "must be absent for label `entailment`".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// One model-generated paragraph with its sentence spans and annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionRecord {
    pub caption_id: String,
    pub model_name: String,
    pub image_ref: String,
    pub text: String,
    pub sentences: Vec<SentenceSpan>,
    #[serde(default)]
    pub annotations: Vec<RaterJudgment>,
}

impl CaptionRecord {
    /// Builds an unannotated record, segmenting `text` with the rule-based
    /// segmenter.
    pub fn from_paragraph(
        caption_id: impl Into<String>,
        model_name: impl Into<String>,
        image_ref: impl Into<String>,
        text: impl Into<String>,
    ) -> Self {
        let text = text.into();
        let sentences = crate::prompt::segment_sentences(&text);
        Self {
            caption_id: caption_id.into(),
            model_name: model_name.into(),
            image_ref: image_ref.into(),
            text,
            sentences,
            annotations: Vec::new(),
        }
    }

    pub fn sentence_count(&self) -> usize {
        self.sentences.len()
    }

    /// Text of sentence `index`. Panics on an out-of-range index.
    pub fn sentence(&self, index: usize) -> &str {
        let span = self.sentences[index];
        &self.text[span.start..span.end]
    }

    pub fn get_sentence(&self, index: usize) -> Option<&str> {
        let span = self.sentences.get(index)?;
        self.text.get(span.start..span.end)
    }

    pub fn sentence_texts(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().map(|s| &self.text[s.start..s.end])
    }

    /// Judgments addressing sentence `index`, in record order.
    pub fn judgments_for(&self, index: usize) -> Vec<&RaterJudgment> {
        self.annotations
            .iter()
            .filter(|j| j.sentence_index == index)
            .collect()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invariant = |field: &'static str, reason: String| CorpusError::Invariant {
            caption_id: self.caption_id.clone(),
            field,
            reason,
        };
        if self.caption_id.is_empty() {
            return Err(invariant("caption_id", "must not be empty".into()));
        }
        let mut prev_end = 0usize;
        for (i, span) in self.sentences.iter().enumerate() {
            if span.start >= span.end {
                return Err(invariant(
                    "sentences",
                    format!("span {i} is empty or reversed ({}..{})", span.start, span.end),
                ));
            }
            if span.end > self.text.len() {
                return Err(invariant(
                    "sentences",
                    format!("span {i} ends at {} past text length {}", span.end, self.text.len()),
                ));
            }
            if i > 0 && span.start < prev_end {
                return Err(invariant(
                    "sentences",
                    format!("span {i} overlaps or precedes span {}", i - 1),
                ));
            }
            let Some(sentence) = self.text.get(span.start..span.end) else {
                return Err(invariant(
                    "sentences",
                    format!("span {i} does not fall on UTF-8 character boundaries"),
                ));
            };
            if let Some(tag) = RESERVED_TAGS.iter().find(|t| sentence.contains(*t)) {
                return Err(invariant(
                    "sentences",
                    format!("sentence {i} contains reserved literal `{tag}`"),
                ));
            }
            prev_end = span.end;
        }
        for (k, judgment) in self.annotations.iter().enumerate() {
            if judgment.sentence_index >= self.sentences.len() {
                return Err(invariant(
                    "annotations",
                    format!(
                        "annotation {k} addresses sentence {} but the record has {}",
                        judgment.sentence_index,
                        self.sentences.len()
                    ),
                ));
            }
            judgment
                .validate()
                .map_err(|(field, reason)| invariant("annotations", format!("annotation {k}: {field} {reason}")))?;
        }
        Ok(())
    }
}

/// Reads a JSON Lines corpus from `path`, validating every record.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CaptionRecord>, CorpusError> {
    let file = File::open(path)?;
    parse_corpus(BufReader::new(file))
}

/// Parses JSON Lines from any reader. Blank lines are skipped; line numbers
/// in errors are 1-based.
pub fn parse_corpus(reader: impl Read) -> Result<Vec<CaptionRecord>, CorpusError> {
    let mut records = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CaptionRecord = serde_json::from_str(&line)
            .map_err(|source| CorpusError::Malformed { line: i + 1, source })?;
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

/// Writes records as JSON Lines, one per line, in the given order.
pub fn write_corpus<'a>(
    records: impl IntoIterator<Item = &'a CaptionRecord>,
    mut out: impl Write,
) -> std::io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
