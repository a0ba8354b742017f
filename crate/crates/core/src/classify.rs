//! Sentence and caption judging: backend confidences become an entailment
//! score and a binary label, with optional critiques for inaccurate
//! sentences.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{self, Backend, BackendError, BinaryConfidence, ImageRef};
use crate::corpus::CaptionRecord;
use crate::metrics::Label;
use crate::pool::parallel_map;
use crate::prompt::{classification_prompt, critique_prompt, PromptError, PromptPair};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("caption {caption_id}, sentence {sentence_index}: {source}")]
    Sentence {
        caption_id: String,
        sentence_index: usize,
        #[source]
        source: SentenceFailure,
    },
    #[error("caption {0} has no sentences")]
    NoSentences(String),
    #[error("line {line}: malformed judgment: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum SentenceFailure {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Per-sentence outcome. `Unjudged` only appears in keep-partial runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceLabel {
    Accurate,
    Inaccurate,
    Unjudged,
}

impl SentenceLabel {
    pub fn as_binary(self) -> Option<Label> {
        match self {
            SentenceLabel::Accurate => Some(Label::Accurate),
            SentenceLabel::Inaccurate => Some(Label::Inaccurate),
            SentenceLabel::Unjudged => None,
        }
    }
}

impl From<Label> for SentenceLabel {
    fn from(l: Label) -> Self {
        match l {
            Label::Accurate => SentenceLabel::Accurate,
            Label::Inaccurate => SentenceLabel::Inaccurate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceJudgment {
    pub sentence_index: usize,
    /// Normalized probability of "Yes"; absent for unjudged sentences.
    pub score: Option<f64>,
    pub label: SentenceLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critique: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionJudgment {
    pub caption_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    pub judgments: Vec<SentenceJudgment>,
    pub response_correct: bool,
}

impl CaptionJudgment {
    pub fn new(caption_id: impl Into<String>, model_name: Option<String>, judgments: Vec<SentenceJudgment>) -> Self {
        let response_correct = !judgments.is_empty()
            && judgments.iter().all(|j| j.label == SentenceLabel::Accurate);
        Self {
            caption_id: caption_id.into(),
            model_name,
            judgments,
            response_correct,
        }
    }

    pub fn has_unjudged(&self) -> bool {
        self.judgments.iter().any(|j| j.label == SentenceLabel::Unjudged)
    }
}

/// Softmax of the two confidences, i.e. `exp(yes) / (exp(yes) + exp(no))`,
/// evaluated after subtracting the larger value so neither exponent
/// overflows.
pub fn entailment_score(c: &BinaryConfidence) -> f64 {
    let m = c.conf_yes.max(c.conf_no);
    let yes = (c.conf_yes - m).exp();
    let no = (c.conf_no - m).exp();
    yes / (yes + no)
}

/// Accurate only when the Yes confidence is strictly higher; ties are
/// Inaccurate.
pub fn binary_label(c: &BinaryConfidence) -> Label {
    if c.conf_yes > c.conf_no {
        Label::Accurate
    } else {
        Label::Inaccurate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeOptions {
    pub with_critique: bool,
    /// Mark failing sentences Unjudged instead of failing the caption.
    pub keep_partial: bool,
    /// Base seed for sampled confidences.
    pub seed: u64,
    /// Concurrent sentences per caption; defaults to the backend's
    /// `max_parallel`.
    pub workers: Option<usize>,
}

impl Default for JudgeOptions {
    fn default() -> Self {
        Self {
            with_critique: false,
            keep_partial: false,
            seed: 0,
            workers: None,
        }
    }
}

impl JudgeOptions {
    pub fn with_critique(mut self) -> Self {
        self.with_critique = true;
        self
    }
}

/// Deterministic per-sentence seed: FNV-1a over the caption id, offset by the
/// sentence index.
pub(crate) fn sentence_seed(seed: u64, caption_id: &str, index: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in caption_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h.wrapping_add((index as u64).wrapping_mul(1_000))
}

fn judge_inner(
    backend: &dyn Backend,
    record: &CaptionRecord,
    index: usize,
    opts: &JudgeOptions,
) -> Result<SentenceJudgment, SentenceFailure> {
    let pair = PromptPair::for_sentence(record, index)?;
    let image = ImageRef::new(&record.image_ref);
    let confidence = backend::binary_confidence(
        backend,
        &image,
        &classification_prompt(&pair),
        sentence_seed(opts.seed, &record.caption_id, index),
    )?;
    let label = binary_label(&confidence);
    let critique = if label == Label::Inaccurate && opts.with_critique {
        Some(backend::generate(backend, &image, &critique_prompt(&pair))?)
    } else {
        None
    };
    Ok(SentenceJudgment {
        sentence_index: index,
        score: Some(entailment_score(&confidence)),
        label: label.into(),
        critique,
        error: None,
    })
}

/// Judges one sentence in its paragraph context.
pub fn judge_sentence(
    backend: &dyn Backend,
    record: &CaptionRecord,
    index: usize,
    opts: &JudgeOptions,
) -> Result<SentenceJudgment, ClassifyError> {
    judge_inner(backend, record, index, opts).map_err(|source| ClassifyError::Sentence {
        caption_id: record.caption_id.clone(),
        sentence_index: index,
        source,
    })
}

/// Judges every sentence. Results are in sentence order whatever the
/// scheduling; without `keep_partial` the first failing sentence (by index)
/// fails the caption.
pub fn judge_caption(
    backend: &dyn Backend,
    record: &CaptionRecord,
    opts: &JudgeOptions,
) -> Result<CaptionJudgment, ClassifyError> {
    if record.sentence_count() == 0 {
        return Err(ClassifyError::NoSentences(record.caption_id.clone()));
    }
    let indices: Vec<usize> = (0..record.sentence_count()).collect();
    let workers = opts.workers.unwrap_or(backend.spec().max_parallel);
    let results = parallel_map(&indices, workers, |_, &i| judge_sentence(backend, record, i, opts));

    let mut judgments = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(j) => judgments.push(j),
            Err(e) if opts.keep_partial => judgments.push(SentenceJudgment {
                sentence_index: i,
                score: None,
                label: SentenceLabel::Unjudged,
                critique: None,
                error: Some(e.to_string()),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(CaptionJudgment::new(
        &record.caption_id,
        Some(record.model_name.clone()),
        judgments,
    ))
}

pub fn write_judgments<'a>(
    judgments: impl IntoIterator<Item = &'a CaptionJudgment>,
    mut out: impl Write,
) -> std::io::Result<()> {
    for j in judgments {
        serde_json::to_writer(&mut out, j)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_judgments(reader: impl Read) -> Result<Vec<CaptionJudgment>, ClassifyError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| ClassifyError::Malformed { line: i + 1, source })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Capability, MockBackend, MockReply, MockScript};

    fn conf(y: f64, n: f64) -> BinaryConfidence {
        BinaryConfidence::new(y, n, 1)
    }

    #[test]
    fn score_examples() {
        for c in [-50.0, -1.0, 0.0, 3.5, 700.0] {
            assert_eq!(entailment_score(&conf(c, c)), 0.5);
        }
        // logistic(2) computed directly
        let expected = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((entailment_score(&conf(2.0, 0.0)) - expected).abs() < 1e-15);
        assert!((entailment_score(&conf(2.0, 0.0)) - 0.880_797_077_977_882_3).abs() < 1e-15);
        assert_eq!(entailment_score(&conf(1000.0, -1000.0)), 1.0);
        assert_eq!(entailment_score(&conf(-1000.0, 1000.0)), 0.0);
    }

    #[test]
    fn label_examples() {
        assert_eq!(binary_label(&BinaryConfidence::new(4.0, 1.0, 5)), Label::Accurate);
        assert_eq!(binary_label(&BinaryConfidence::new(1.0, 4.0, 5)), Label::Inaccurate);
        assert_eq!(binary_label(&BinaryConfidence::new(2.0, 2.0, 5)), Label::Inaccurate);
    }

    fn record() -> CaptionRecord {
        CaptionRecord::from_paragraph("cap-1", "model-a", "img.jpg", "A red car. A blue door. A cat sits.")
    }

    #[test]
    fn accurate_sentence_has_no_critique() {
        let m = MockBackend::new(
            "m",
            Capability::TokenScores,
            MockScript::default().with_default(MockReply::verdict(true)),
        );
        let j = judge_sentence(&m, &record(), 0, &JudgeOptions::default().with_critique()).unwrap();
        assert_eq!(j.label, SentenceLabel::Accurate);
        assert_eq!(j.critique, None);
        assert!(j.score.unwrap() > 0.5);
        // classification only: greedy with scores requested
        let calls = m.calls();
        assert_eq!(calls.len(), 1);
        assert!(calls[0].wants_scores && calls[0].temperature == 0.0);
    }

    #[test]
    fn inaccurate_sentence_gets_critique() {
        let script = MockScript::default()
            .classify("A blue door.", false)
            .critique("A blue door.", "The door is green, not blue.")
            .with_default(MockReply::verdict(true));
        let m = MockBackend::new("m", Capability::SampleOnly, script);
        let cj = judge_caption(&m, &record(), &JudgeOptions::default().with_critique()).unwrap();
        assert!(!cj.response_correct);
        assert_eq!(cj.judgments[1].label, SentenceLabel::Inaccurate);
        assert_eq!(cj.judgments[1].critique.as_deref(), Some("The door is green, not blue."));
        assert_eq!(cj.judgments[1].score, Some(entailment_score(&BinaryConfidence::new(0.0, 5.0, 5))));
        assert_eq!(cj.model_name.as_deref(), Some("model-a"));
        // 3 sentences x 5 samples + 1 critique
        assert_eq!(m.calls().len(), 16);
    }

    #[test]
    fn without_critique_flag_no_critique_call() {
        let script = MockScript::default()
            .classify("A blue door.", false)
            .with_default(MockReply::verdict(true));
        let m = MockBackend::new("m", Capability::TokenScores, script);
        let cj = judge_caption(&m, &record(), &JudgeOptions::default()).unwrap();
        assert_eq!(cj.judgments[1].critique, None);
        assert_eq!(m.calls().len(), 3);
    }

    #[test]
    fn all_accurate_caption_is_correct() {
        let m = MockBackend::new(
            "m",
            Capability::TokenScores,
            MockScript::default().with_default(MockReply::verdict(true)),
        );
        let cj = judge_caption(&m, &record(), &JudgeOptions::default()).unwrap();
        assert!(cj.response_correct);
        let idx: Vec<usize> = cj.judgments.iter().map(|j| j.sentence_index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn indeterminate_answer_carries_sentence_identity() {
        let script = MockScript::default()
            .rule(["<TARGET>A cat sits.</TARGET>"], MockReply::samples(["maybe"]))
            .with_default(MockReply::verdict(true));
        let m = MockBackend::new("m", Capability::SampleOnly, script);
        let err = judge_caption(&m, &record(), &JudgeOptions::default()).unwrap_err();
        match err {
            ClassifyError::Sentence {
                caption_id,
                sentence_index,
                source: SentenceFailure::Backend(BackendError::IndeterminateAnswer { .. }),
            } => {
                assert_eq!(caption_id, "cap-1");
                assert_eq!(sentence_index, 2);
            }
            other => panic!("unexpected {other}"),
        }

        let partial = JudgeOptions {
            keep_partial: true,
            ..JudgeOptions::default()
        };
        let cj = judge_caption(&m, &record(), &partial).unwrap();
        assert_eq!(cj.judgments[2].label, SentenceLabel::Unjudged);
        assert!(cj.judgments[2].error.is_some());
        assert!(cj.has_unjudged());
        assert!(!cj.response_correct);
    }

    #[test]
    fn judgment_json_field_names() {
        let cj = CaptionJudgment::new(
            "c",
            None,
            vec![SentenceJudgment {
                sentence_index: 0,
                score: Some(0.25),
                label: SentenceLabel::Inaccurate,
                critique: Some("no".into()),
                error: None,
            }],
        );
        let v = serde_json::to_value(&cj).unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "caption_id": "c",
                "judgments": [{"sentence_index": 0, "score": 0.25, "label": "inaccurate", "critique": "no"}],
                "response_correct": false
            })
        );
        let mut buf = Vec::new();
        write_judgments([&cj], &mut buf).unwrap();
        assert_eq!(read_judgments(buf.as_slice()).unwrap(), vec![cj]);
    }
}
