//! Sentence segmentation and the classification, critique and revision
//! prompts.
//!
//! The three templates live in `templates/` at the crate root and are
//! compiled in byte-for-byte, so external tooling can read the same files.

mod segment;

use thiserror::Error;

use crate::corpus::CaptionRecord;

pub use segment::{normalize_paragraph, segment_sentences, split_sentences, ABBREVIATIONS};

pub const CLASSIFICATION_TEMPLATE: &str = include_str!("../../templates/classification.txt");
pub const CRITIQUE_TEMPLATE: &str = include_str!("../../templates/critique.txt");
pub const REVISION_TEMPLATE: &str = include_str!("../../templates/revision.txt");

/// Bumped whenever `templates/revision.txt` changes. Recorded in run
/// manifests.
pub const REVISION_TEMPLATE_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("sentence index {index} out of range for caption {caption_id} ({len} sentences)")]
    IndexOutOfRange {
        caption_id: String,
        index: usize,
        len: usize,
    },
    #[error("target sentence is empty")]
    EmptyTarget,
    #[error("{field} contains reserved literal `{tag}`")]
    ReservedTag { field: &'static str, tag: &'static str },
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),
}

/// The context/target pair embedded in the classification and critique
/// prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPair {
    prefix: String,
    target: String,
}

impl PromptPair {
    /// Rejects empty targets and tag literals that would close the prompt
    /// framing early.
    pub fn new(prefix: impl Into<String>, target: impl Into<String>) -> Result<Self, PromptError> {
        let prefix = prefix.into();
        let target = target.into();
        if target.trim().is_empty() {
            return Err(PromptError::EmptyTarget);
        }
        for tag in crate::corpus::RESERVED_TAGS {
            if target.contains(tag) {
                return Err(PromptError::ReservedTag { field: "target", tag });
            }
            if prefix.contains(tag) {
                return Err(PromptError::ReservedTag { field: "prefix", tag });
            }
        }
        Ok(Self { prefix, target })
    }

    /// Pair for sentence `index` of `record`, with the preceding sentences as
    /// prefix.
    pub fn for_sentence(record: &CaptionRecord, index: usize) -> Result<Self, PromptError> {
        let prefix = claim_prefix(record, index)?;
        Self::new(prefix, record.sentence(index))
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn target(&self) -> &str {
        &self.target
    }
}

/// Sentences `0..index` joined by single spaces; empty for the first
/// sentence.
pub fn claim_prefix(record: &CaptionRecord, index: usize) -> Result<String, PromptError> {
    if index >= record.sentence_count() {
        return Err(PromptError::IndexOutOfRange {
            caption_id: record.caption_id.clone(),
            index,
            len: record.sentence_count(),
        });
    }
    Ok(record.sentence_texts().take(index).collect::<Vec<_>>().join(" "))
}

pub fn classification_prompt(pair: &PromptPair) -> String {
    fill(
        CLASSIFICATION_TEMPLATE,
        &[("prefix", pair.prefix()), ("target", pair.target())],
    )
}

pub fn critique_prompt(pair: &PromptPair) -> String {
    fill(
        CRITIQUE_TEMPLATE,
        &[("prefix", pair.prefix()), ("target", pair.target())],
    )
}

/// Instruction asking a reviser model to rewrite `original_sentence` so it
/// fixes the errors named in `critique`.
pub fn revision_instruction(original_sentence: &str, critique: &str) -> Result<String, PromptError> {
    if original_sentence.trim().is_empty() {
        return Err(PromptError::EmptyInput("original sentence"));
    }
    if critique.trim().is_empty() {
        return Err(PromptError::EmptyInput("critique"));
    }
    Ok(fill(
        REVISION_TEMPLATE,
        &[("sentence", original_sentence), ("critique", critique)],
    ))
}

/// Substitutes `{name}` placeholders in one left-to-right pass. Substituted
/// values are never rescanned, so a value containing `{target}` stays
/// literal.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    'scan: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        for (name, value) in values {
            if let Some(tail) = after.strip_prefix(name).and_then(|t| t.strip_prefix('}')) {
                out.push_str(value);
                rest = tail;
                continue 'scan;
            }
        }
        out.push('{');
        rest = after;
    }
    out.push_str(rest);
    out
}
