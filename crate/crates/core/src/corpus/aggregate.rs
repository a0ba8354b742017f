use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CaptionRecord, CorpusError, RaterJudgment, RaterLabel};

/// Majority verdict for one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatedVerdict {
    Entailed,
    NonEntailed,
    NothingToAssess,
    /// No vote group reached a strict majority. Excluded from every
    /// factuality denominator.
    Unresolved,
}

impl AggregatedVerdict {
    /// Entailed and NonEntailed sentences are the only assessable ones.
    pub fn is_assessable(self) -> bool {
        matches!(self, AggregatedVerdict::Entailed | AggregatedVerdict::NonEntailed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedLabel {
    pub verdict: AggregatedVerdict,
    pub vote_counts: BTreeMap<RaterLabel, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critique_target: Option<String>,
    pub claims_about_image: bool,
}

impl AggregatedLabel {
    pub fn total_votes(&self) -> usize {
        self.vote_counts.values().sum()
    }
}

/// Identifies one sentence across a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SentenceKey {
    pub caption_id: String,
    pub sentence_index: usize,
}

impl SentenceKey {
    pub fn new(caption_id: impl Into<String>, sentence_index: usize) -> Self {
        Self {
            caption_id: caption_id.into(),
            sentence_index,
        }
    }
}

pub type AggregatedMap = BTreeMap<SentenceKey, AggregatedLabel>;

/// Collapses one sentence's rater judgments into a majority verdict.
///
/// Votes fall into three groups: Entailment, {Neutral, Contradiction} and
/// NothingToAssess. A group wins only with a strict majority of all votes;
/// otherwise the sentence is Unresolved.
pub fn aggregate_judgments<J>(judgments: &[J]) -> Result<AggregatedLabel, CorpusError>
where
    J: std::borrow::Borrow<RaterJudgment>,
{
    let first = judgments.first().ok_or(CorpusError::NoJudgments)?.borrow();
    let index = first.sentence_index;

    let mut vote_counts: BTreeMap<RaterLabel, usize> = BTreeMap::new();
    let mut claims = 0usize;
    let mut rationales: Vec<&str> = Vec::new();
    for j in judgments.iter().map(|j| j.borrow()) {
        if j.sentence_index != index {
            return Err(CorpusError::MixedSentences {
                first: index,
                other: j.sentence_index,
            });
        }
        *vote_counts.entry(j.label).or_default() += 1;
        if j.claims_about_image {
            claims += 1;
        }
        if j.label.is_non_entailment() {
            if let Some(r) = j.rationale.as_deref().filter(|r| !r.trim().is_empty()) {
                rationales.push(r);
            }
        }
    }

    let n = judgments.len();
    let count = |l: RaterLabel| vote_counts.get(&l).copied().unwrap_or(0);
    let non_entailed = count(RaterLabel::Neutral) + count(RaterLabel::Contradiction);
    let strict = |c: usize| 2 * c > n;

    let verdict = if strict(non_entailed) {
        AggregatedVerdict::NonEntailed
    } else if strict(count(RaterLabel::Entailment)) {
        AggregatedVerdict::Entailed
    } else if strict(count(RaterLabel::NothingToAssess)) {
        AggregatedVerdict::NothingToAssess
    } else {
        AggregatedVerdict::Unresolved
    };

    // Claim-question ties resolve to true.
    let claims_about_image = 2 * claims >= n;

    let critique_target = match verdict {
        AggregatedVerdict::NonEntailed if !rationales.is_empty() => {
            Some(select_critique_target(&rationales)?.to_string())
        }
        _ => None,
    };

    Ok(AggregatedLabel {
        verdict,
        vote_counts,
        critique_target,
        claims_about_image,
    })
}

/// Picks the longest rationale (by character count); the earliest wins ties.
pub fn select_critique_target<S: AsRef<str>>(rationales: &[S]) -> Result<&str, CorpusError> {
    let mut best: Option<(&str, usize)> = None;
    for r in rationales {
        let r = r.as_ref();
        let len = r.chars().count();
        if best.is_none_or(|(_, l)| len > l) {
            best = Some((r, len));
        }
    }
    best.map(|(r, _)| r).ok_or(CorpusError::NoRationales)
}

/// Aggregates every annotated sentence of every record. Sentences without
/// any judgment are left out of the map.
pub fn aggregate_corpus(records: &[CaptionRecord]) -> Result<AggregatedMap, CorpusError> {
    let mut out = AggregatedMap::new();
    for record in records {
        for index in 0..record.sentence_count() {
            let judgments = record.judgments_for(index);
            if judgments.is_empty() {
                continue;
            }
            out.insert(
                SentenceKey::new(&record.caption_id, index),
                aggregate_judgments(&judgments)?,
            );
        }
    }
    Ok(out)
}
