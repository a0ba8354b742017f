use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{AggregatedMap, AggregatedVerdict, CaptionRecord, CorpusError, SentenceKey};

/// Descriptive statistics for one captioning model (or the pooled corpus).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStats {
    pub model_name: String,
    pub n_descriptions: usize,
    /// Mean characters per description.
    pub desc_len_avg: f64,
    pub sentences_avg: f64,
    /// Total sentence characters over total sentences.
    pub sentence_len_avg: f64,
    /// `None` when no sentence is assessable (zero denominator).
    pub pct_correct_sentences: Option<f64>,
    pub unique_bigrams: usize,
}

/// Statistics for every record whose `model_name` matches.
pub fn corpus_stats(
    records: &[CaptionRecord],
    aggregated: &AggregatedMap,
    model_name: &str,
) -> Result<ModelStats, CorpusError> {
    let selected: Vec<&CaptionRecord> = records
        .iter()
        .filter(|r| r.model_name == model_name)
        .collect();
    if selected.is_empty() {
        return Err(CorpusError::UnknownModel(model_name.to_string()));
    }
    stats_over(model_name, &selected, aggregated)
}

/// Pooled statistics over the whole corpus, reported as `TOTAL`.
pub fn total_stats(
    records: &[CaptionRecord],
    aggregated: &AggregatedMap,
) -> Result<ModelStats, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::UnknownModel("TOTAL".into()));
    }
    let all: Vec<&CaptionRecord> = records.iter().collect();
    stats_over("TOTAL", &all, aggregated)
}

fn stats_over(
    name: &str,
    records: &[&CaptionRecord],
    aggregated: &AggregatedMap,
) -> Result<ModelStats, CorpusError> {
    let n = records.len() as f64;
    let desc_chars: usize = records.iter().map(|r| r.text.chars().count()).sum();
    let n_sentences: usize = records.iter().map(|r| r.sentence_count()).sum();
    let sentence_chars: usize = records
        .iter()
        .flat_map(|r| r.sentence_texts())
        .map(|s| s.chars().count())
        .sum();

    // A model with no labels at all is simply unannotated; a partially
    // labeled one violates the precondition.
    let any_labeled = records
        .iter()
        .any(|r| (0..r.sentence_count()).any(|i| aggregated.contains_key(&SentenceKey::new(&r.caption_id, i))));

    let mut entailed = 0usize;
    let mut non_entailed = 0usize;
    if any_labeled {
        for r in records {
            for i in 0..r.sentence_count() {
                let label = aggregated
                    .get(&SentenceKey::new(&r.caption_id, i))
                    .ok_or_else(|| CorpusError::MissingLabel {
                        caption_id: r.caption_id.clone(),
                        sentence_index: i,
                    })?;
                match label.verdict {
                    AggregatedVerdict::Entailed => entailed += 1,
                    AggregatedVerdict::NonEntailed => non_entailed += 1,
                    AggregatedVerdict::NothingToAssess | AggregatedVerdict::Unresolved => {}
                }
            }
        }
    }
    let assessable = entailed + non_entailed;
    let pct_correct_sentences =
        (assessable > 0).then(|| 100.0 * entailed as f64 / assessable as f64);

    Ok(ModelStats {
        model_name: name.to_string(),
        n_descriptions: records.len(),
        desc_len_avg: desc_chars as f64 / n,
        sentences_avg: n_sentences as f64 / n,
        sentence_len_avg: if n_sentences == 0 {
            0.0
        } else {
            sentence_chars as f64 / n_sentences as f64
        },
        pct_correct_sentences,
        unique_bigrams: unique_bigrams(records.iter().map(|r| r.text.as_str())),
    })
}

fn is_edge_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '«' | '»' | '—' | '–' | '…')
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|t| t.trim_matches(is_edge_punctuation).to_lowercase())
        .filter(|t| !t.is_empty())
}

/// Number of distinct adjacent word pairs across `texts`.
///
/// Tokens are whitespace-separated, lowercased, and stripped of leading and
/// trailing punctuation; empty tokens are dropped. Pairs never span two texts.
pub fn unique_bigrams<'a>(texts: impl IntoIterator<Item = &'a str>) -> usize {
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for text in texts {
        let toks: Vec<String> = tokens(text).collect();
        for pair in toks.windows(2) {
            seen.insert((pair[0].clone(), pair[1].clone()));
        }
    }
    seen.len()
}
