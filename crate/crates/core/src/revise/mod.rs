//! Critic-and-Revise: flag inaccurate sentences with a critic, have a
//! reviser rewrite each one guided by its critique, and splice the rewrites
//! back into the paragraph.

pub mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{self, Backend, BackendError, ImageRef};
use crate::classify::{judge_caption, judge_sentence, ClassifyError, JudgeOptions, SentenceLabel};
use crate::corpus::{CaptionRecord, SentenceSpan, RESERVED_TAGS};
use crate::metrics::Label;
use crate::pool::parallel_map;
use crate::prompt::{revision_instruction, segment_sentences};

#[derive(Debug, Error)]
pub enum ReviseError {
    #[error("critic failed: {0}")]
    Critic(#[from] ClassifyError),
    #[error("caption {0} has no edits to judge")]
    NoEdits(String),
    #[error("pipeline report needs at least one flagged sentence")]
    EmptyReport,
    #[error("flagged and revised lists differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("cannot merge reports from different judges ({0:?} and {1:?})")]
    JudgeMismatch(Judge, Judge),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditStatus {
    Applied,
    /// The reviser answered, but the answer broke the one-sentence contract.
    Rejected,
    /// The reviser call failed.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    pub sentence_index: usize,
    pub original_sentence: String,
    pub critique: String,
    /// Reviser output as received; absent when the call failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised_sentence: Option<String>,
    pub status: EditStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisedCaption {
    pub caption_id: String,
    pub model_name: String,
    pub image_ref: String,
    pub original_text: String,
    pub revised_text: String,
    /// Sentence spans of `revised_text`.
    pub revised_sentences: Vec<SentenceSpan>,
    pub edits: Vec<Edit>,
}

impl RevisedCaption {
    /// The revised paragraph as an unannotated record.
    pub fn revised_record(&self) -> CaptionRecord {
        CaptionRecord {
            caption_id: self.caption_id.clone(),
            model_name: self.model_name.clone(),
            image_ref: self.image_ref.clone(),
            text: self.revised_text.clone(),
            sentences: self.revised_sentences.clone(),
            annotations: Vec::new(),
        }
    }

    pub fn applied(&self) -> impl Iterator<Item = &Edit> {
        self.edits.iter().filter(|e| e.status == EditStatus::Applied)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReviseOptions {
    pub seed: u64,
    /// Concurrent reviser calls per caption; defaults to the reviser's
    /// `max_parallel`.
    pub workers: Option<usize>,
}

impl Default for ReviseOptions {
    fn default() -> Self {
        Self { seed: 0, workers: None }
    }
}

fn check_revision(text: &str) -> Result<(), String> {
    if text.trim().is_empty() {
        return Err("reviser returned empty text".into());
    }
    let n = segment_sentences(text).len();
    if n != 1 {
        return Err(format!("reviser returned {n} sentences, expected 1"));
    }
    if let Some(tag) = RESERVED_TAGS.iter().find(|t| text.contains(*t)) {
        return Err(format!("reviser output contains reserved tag {tag}"));
    }
    Ok(())
}

fn revise_one(reviser: &dyn Backend, image: &ImageRef, index: usize, original: &str, critique: &str) -> Edit {
    let mut edit = Edit {
        sentence_index: index,
        original_sentence: original.to_string(),
        critique: critique.to_string(),
        revised_sentence: None,
        status: EditStatus::Failed,
        reason: None,
    };
    let instruction = match revision_instruction(original, critique) {
        Ok(i) => i,
        Err(e) => {
            edit.reason = Some(e.to_string());
            return edit;
        }
    };
    match backend::generate(reviser, image, &instruction) {
        Ok(text) => {
            match check_revision(&text) {
                Ok(()) => edit.status = EditStatus::Applied,
                Err(why) => {
                    edit.status = EditStatus::Rejected;
                    edit.reason = Some(why);
                }
            }
            edit.revised_sentence = Some(text);
        }
        Err(BackendError::EmptyCompletion) => {
            edit.status = EditStatus::Rejected;
            edit.revised_sentence = Some(String::new());
            edit.reason = Some("reviser returned empty text".into());
        }
        Err(e) => edit.reason = Some(e.to_string()),
    }
    edit
}

/// Replaces the spans of applied edits and recomputes all spans. Text
/// between sentences is kept byte for byte.
fn splice(record: &CaptionRecord, edits: &[Edit]) -> (String, Vec<SentenceSpan>) {
    let mut text = String::with_capacity(record.text.len());
    let mut spans = Vec::with_capacity(record.sentences.len());
    let mut cursor = 0;
    for (i, span) in record.sentences.iter().enumerate() {
        text.push_str(&record.text[cursor..span.start]);
        let replacement = edits
            .iter()
            .find(|e| e.sentence_index == i && e.status == EditStatus::Applied)
            .and_then(|e| e.revised_sentence.as_deref());
        let sentence = replacement.unwrap_or(&record.text[span.start..span.end]);
        let start = text.len();
        text.push_str(sentence);
        spans.push(SentenceSpan::new(start, text.len()));
        cursor = span.end;
    }
    text.push_str(&record.text[cursor..]);
    (text, spans)
}

/// Runs the critic over every sentence, revises the inaccurate ones against
/// the original paragraph, and reassembles the caption. A critic failure
/// aborts the caption; a reviser failure only marks that edit.
pub fn critic_and_revise(
    critic: &dyn Backend,
    reviser: &dyn Backend,
    record: &CaptionRecord,
    opts: &ReviseOptions,
) -> Result<RevisedCaption, ReviseError> {
    let judge_opts = JudgeOptions {
        with_critique: true,
        keep_partial: false,
        seed: opts.seed,
        workers: None,
    };
    let judged = judge_caption(critic, record, &judge_opts)?;
    let flagged: Vec<(usize, String)> = judged
        .judgments
        .iter()
        .filter(|j| j.label == SentenceLabel::Inaccurate)
        .map(|j| (j.sentence_index, j.critique.clone().unwrap_or_default()))
        .collect();

    let image = ImageRef::new(&record.image_ref);
    let workers = opts.workers.unwrap_or(reviser.spec().max_parallel);
    let edits = parallel_map(&flagged, workers, |_, (i, critique)| {
        revise_one(reviser, &image, *i, record.sentence(*i), critique)
    });
    let (revised_text, revised_sentences) = splice(record, &edits);
    Ok(RevisedCaption {
        caption_id: record.caption_id.clone(),
        model_name: record.model_name.clone(),
        image_ref: record.image_ref.clone(),
        original_text: record.text.clone(),
        revised_text,
        revised_sentences,
        edits,
    })
}

/// Captions processed on a bounded worker pool, results in input order.
pub fn revise_corpus(
    critic: &dyn Backend,
    reviser: &dyn Backend,
    records: &[CaptionRecord],
    workers: usize,
    opts: &ReviseOptions,
) -> Vec<Result<RevisedCaption, ReviseError>> {
    parallel_map(records, workers, |_, r| critic_and_revise(critic, reviser, r, opts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judge {
    Human,
    SelfJudge,
}

/// Accuracy of the flagged sentences before and after revision. Counts are
/// kept so reports merge exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub n_flagged: usize,
    pub original_accurate: usize,
    pub fixed_accurate: usize,
    pub original_accurate_pct: f64,
    pub fixed_accurate_pct: f64,
    pub delta: f64,
    pub judge: Judge,
}

impl PipelineReport {
    pub fn from_counts(n_flagged: usize, original_accurate: usize, fixed_accurate: usize, judge: Judge) -> Result<Self, ReviseError> {
        if n_flagged == 0 {
            return Err(ReviseError::EmptyReport);
        }
        let n = n_flagged as f64;
        Ok(Self {
            n_flagged,
            original_accurate,
            fixed_accurate,
            original_accurate_pct: original_accurate as f64 / n,
            fixed_accurate_pct: fixed_accurate as f64 / n,
            // from the integer difference, so e.g. 61 vs 15 of 100 is exactly 0.46
            delta: (fixed_accurate as f64 - original_accurate as f64) / n,
            judge,
        })
    }

    /// Pools several reports; associative and order-insensitive.
    pub fn merge<'a>(reports: impl IntoIterator<Item = &'a PipelineReport>) -> Result<Self, ReviseError> {
        let mut judge = None;
        let (mut n, mut o, mut f) = (0, 0, 0);
        for r in reports {
            match judge {
                None => judge = Some(r.judge),
                Some(j) if j != r.judge => return Err(ReviseError::JudgeMismatch(j, r.judge)),
                _ => {}
            }
            n += r.n_flagged;
            o += r.original_accurate;
            f += r.fixed_accurate;
        }
        Self::from_counts(n, o, f, judge.ok_or(ReviseError::EmptyReport)?)
    }
}

pub fn pipeline_report(flagged_truths: &[Label], revised_truths: &[Label], judge: Judge) -> Result<PipelineReport, ReviseError> {
    if flagged_truths.len() != revised_truths.len() {
        return Err(ReviseError::LengthMismatch(flagged_truths.len(), revised_truths.len()));
    }
    let count = |xs: &[Label]| xs.iter().filter(|&&l| l == Label::Accurate).count();
    PipelineReport::from_counts(flagged_truths.len(), count(flagged_truths), count(revised_truths), judge)
}

/// Re-judges every flagged sentence in its revised paragraph context with
/// the critic itself. The originals were all flagged by this critic, so
/// their accuracy is 0 by construction. Rejected and failed edits keep the
/// original sentence, which is judged again like any other.
pub fn self_judge(critic: &dyn Backend, revised: &RevisedCaption, opts: &ReviseOptions) -> Result<PipelineReport, ReviseError> {
    if revised.edits.is_empty() {
        return Err(ReviseError::NoEdits(revised.caption_id.clone()));
    }
    let record = revised.revised_record();
    let judge_opts = JudgeOptions {
        seed: opts.seed,
        ..JudgeOptions::default()
    };
    let mut after = Vec::with_capacity(revised.edits.len());
    for edit in &revised.edits {
        let j = judge_sentence(critic, &record, edit.sentence_index, &judge_opts)?;
        after.push(j.label.as_binary().unwrap_or(Label::Inaccurate));
    }
    let before = vec![Label::Inaccurate; after.len()];
    pipeline_report(&before, &after, Judge::SelfJudge)
}
