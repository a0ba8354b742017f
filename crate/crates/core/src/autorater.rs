//! Per-model factuality criteria, leaderboards, and their rank correlation
//! with a reference (human) ranking.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{CaptionJudgment, SentenceJudgment, SentenceLabel};
use crate::corpus::{aggregate_corpus, AggregatedVerdict, CaptionRecord, CorpusError, SentenceKey};
use crate::metrics::{rank_correlation, MetricsError, RankCorrelation};

/// Two metric values closer than this share a display rank.
pub const RANK_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AutoraterError {
    #[error("no judgments for model `{0}`")]
    Empty(String),
    #[error("model `{model}`: caption `{caption_id}` has no judged sentence")]
    NoJudgedSentence { model: String, caption_id: String },
    #[error("model `{0}`: every caption has unjudged sentences, response-level correctness is not computable")]
    NoCompleteCaption(String),
    #[error("caption `{0}` has no model_name")]
    MissingModel(String),
    #[error("model sets differ: only in criteria {only_in_criteria:?}, only in reference {only_in_reference:?}")]
    ModelSetMismatch {
        only_in_criteria: Vec<String>,
        only_in_reference: Vec<String>,
    },
    #[error("a leaderboard needs at least 3 models, got {0}")]
    TooFewModels(usize),
    #[error("unknown criterion `{0}` (expected response, overall, per-desc or all)")]
    UnknownCriterion(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("fixture: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Response,
    Overall,
    PerDesc,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Response, Criterion::Overall, Criterion::PerDesc];

    /// Command-line spelling, also used in output file names.
    pub fn slug(self) -> &'static str {
        match self {
            Criterion::Response => "response",
            Criterion::Overall => "overall",
            Criterion::PerDesc => "per-desc",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Criterion::Response => "Response-level correctness",
            Criterion::Overall => "Correct sentences overall",
            Criterion::PerDesc => "Correct sentences per description",
        }
    }

    /// Parses one criterion or `all`.
    pub fn parse_selection(s: &str) -> Result<Vec<Criterion>, AutoraterError> {
        if s == "all" {
            Ok(Self::ALL.to_vec())
        } else {
            Ok(vec![s.parse()?])
        }
    }
}

impl FromStr for Criterion {
    type Err = AutoraterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "response" => Ok(Criterion::Response),
            "overall" => Ok(Criterion::Overall),
            "per-desc" | "per_desc" => Ok(Criterion::PerDesc),
            other => Err(AutoraterError::UnknownCriterion(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCriteria {
    pub model_name: String,
    pub response_correct_pct: f64,
    pub sentences_overall_pct: f64,
    pub sentences_per_desc_avg: f64,
}

impl ModelCriteria {
    pub fn get(&self, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::Response => self.response_correct_pct,
            Criterion::Overall => self.sentences_overall_pct,
            Criterion::PerDesc => self.sentences_per_desc_avg,
        }
    }
}

/// The three criteria for one model. Unjudged sentences leave every
/// denominator; captions with any unjudged sentence leave the response-level
/// tally.
pub fn model_criteria(model_name: &str, judgments: &[CaptionJudgment]) -> Result<ModelCriteria, AutoraterError> {
    if judgments.is_empty() {
        return Err(AutoraterError::Empty(model_name.to_string()));
    }
    let (mut complete, mut complete_correct) = (0u64, 0u64);
    let (mut judged, mut accurate) = (0u64, 0u64);
    let mut per_desc_sum = 0.0;
    for cj in judgments {
        let n_judged = cj.judgments.iter().filter(|j| j.label != SentenceLabel::Unjudged).count() as u64;
        let n_accurate = cj.judgments.iter().filter(|j| j.label == SentenceLabel::Accurate).count() as u64;
        if n_judged == 0 {
            return Err(AutoraterError::NoJudgedSentence {
                model: model_name.to_string(),
                caption_id: cj.caption_id.clone(),
            });
        }
        judged += n_judged;
        accurate += n_accurate;
        per_desc_sum += n_accurate as f64 / n_judged as f64;
        if !cj.has_unjudged() {
            complete += 1;
            complete_correct += u64::from(n_accurate == n_judged);
        }
    }
    if complete == 0 {
        return Err(AutoraterError::NoCompleteCaption(model_name.to_string()));
    }
    Ok(ModelCriteria {
        model_name: model_name.to_string(),
        response_correct_pct: complete_correct as f64 / complete as f64,
        sentences_overall_pct: accurate as f64 / judged as f64,
        sentences_per_desc_avg: per_desc_sum / judgments.len() as f64,
    })
}

/// Groups judgments by `model_name` and computes each model's criteria.
pub fn criteria_by_model(judgments: &[CaptionJudgment]) -> Result<BTreeMap<String, ModelCriteria>, AutoraterError> {
    let mut groups: BTreeMap<&str, Vec<CaptionJudgment>> = BTreeMap::new();
    for cj in judgments {
        let model = cj
            .model_name
            .as_deref()
            .ok_or_else(|| AutoraterError::MissingModel(cj.caption_id.clone()))?;
        groups.entry(model).or_default().push(cj.clone());
    }
    groups
        .into_iter()
        .map(|(m, js)| Ok((m.to_string(), model_criteria(m, &js)?)))
        .collect()
}

/// Human majority verdicts as caption judgments: Entailed sentences count
/// as Accurate, NonEntailed as Inaccurate, everything else is dropped.
/// Captions left with no assessable sentence are omitted.
pub fn human_judgments(records: &[CaptionRecord]) -> Result<Vec<CaptionJudgment>, AutoraterError> {
    let aggregated = aggregate_corpus(records)?;
    let mut out = Vec::new();
    for r in records {
        let judgments: Vec<SentenceJudgment> = (0..r.sentence_count())
            .filter_map(|i| {
                let key = SentenceKey {
                    caption_id: r.caption_id.clone(),
                    sentence_index: i,
                };
                let (label, score) = match aggregated.get(&key)?.verdict {
                    AggregatedVerdict::Entailed => (SentenceLabel::Accurate, 1.0),
                    AggregatedVerdict::NonEntailed => (SentenceLabel::Inaccurate, 0.0),
                    AggregatedVerdict::NothingToAssess | AggregatedVerdict::Unresolved => return None,
                };
                Some(SentenceJudgment {
                    sentence_index: i,
                    score: Some(score),
                    label,
                    critique: None,
                    error: None,
                })
            })
            .collect();
        if !judgments.is_empty() {
            out.push(CaptionJudgment::new(&r.caption_id, Some(r.model_name.clone()), judgments));
        }
    }
    Ok(out)
}

pub fn human_criteria(records: &[CaptionRecord]) -> Result<BTreeMap<String, ModelCriteria>, AutoraterError> {
    criteria_by_model(&human_judgments(records)?)
}

/// Competition ranks ("1224") for values already sorted in descending
/// order.
pub fn competition_ranks(sorted_desc: &[f64]) -> Vec<usize> {
    let mut ranks = Vec::with_capacity(sorted_desc.len());
    for (i, &v) in sorted_desc.iter().enumerate() {
        if i > 0 && (sorted_desc[i - 1] - v).abs() <= RANK_EPSILON {
            ranks.push(ranks[i - 1]);
        } else {
            ranks.push(i + 1);
        }
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub rank: usize,
    pub model_name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub criterion: Criterion,
    pub rows: Vec<LeaderboardRow>,
    pub correlation: RankCorrelation,
}

fn check_model_sets<A, B>(a: &BTreeMap<String, A>, b: &BTreeMap<String, B>) -> Result<(), AutoraterError> {
    let only_a: Vec<String> = a.keys().filter(|k| !b.contains_key(*k)).cloned().collect();
    let only_b: Vec<String> = b.keys().filter(|k| !a.contains_key(*k)).cloned().collect();
    if only_a.is_empty() && only_b.is_empty() {
        Ok(())
    } else {
        Err(AutoraterError::ModelSetMismatch {
            only_in_criteria: only_a,
            only_in_reference: only_b,
        })
    }
}

/// Leaderboard over raw metric values (higher is better). Correlation uses
/// the values themselves with average ranks for ties; the competition ranks
/// are for display only.
pub fn leaderboard_from_values(
    criterion: Criterion,
    values: &BTreeMap<String, f64>,
    reference: &BTreeMap<String, f64>,
) -> Result<Leaderboard, AutoraterError> {
    check_model_sets(values, reference)?;
    if values.len() < 3 {
        return Err(AutoraterError::TooFewModels(values.len()));
    }
    let xs: Vec<f64> = reference.values().copied().collect();
    let ys: Vec<f64> = values.values().copied().collect();
    let correlation = rank_correlation(&xs, &ys)?;

    let mut sorted: Vec<(&String, f64)> = values.iter().map(|(m, &v)| (m, v)).collect();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let ranks = competition_ranks(&sorted.iter().map(|r| r.1).collect::<Vec<_>>());
    let rows = sorted
        .into_iter()
        .zip(ranks)
        .map(|((m, v), rank)| LeaderboardRow {
            rank,
            model_name: m.clone(),
            value: v,
        })
        .collect();
    Ok(Leaderboard {
        criterion,
        rows,
        correlation,
    })
}

pub fn build_leaderboard(
    criteria: &BTreeMap<String, ModelCriteria>,
    criterion: Criterion,
    reference: &BTreeMap<String, ModelCriteria>,
) -> Result<Leaderboard, AutoraterError> {
    let pick = |m: &BTreeMap<String, ModelCriteria>| -> BTreeMap<String, f64> {
        m.iter().map(|(k, c)| (k.clone(), c.get(criterion))).collect()
    };
    leaderboard_from_values(criterion, &pick(criteria), &pick(reference))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub json: String,
}

pub fn render_text(board: &Leaderboard) -> String {
    let width = board.rows.iter().map(|r| r.model_name.chars().count()).max().unwrap_or(0);
    let mut s = String::new();
    let _ = writeln!(s, "# {}", board.criterion.title());
    for r in &board.rows {
        let _ = writeln!(s, "{:>3}  {:<width$}  {:.4}", r.rank, r.model_name, r.value);
    }
    let c = &board.correlation;
    let _ = writeln!(s, "spearman_rho {:.3}^{{{:.1e}}}", c.rho, c.rho_p);
    let _ = writeln!(s, "kendall_tau {:.3}^{{{:.1e}}}", c.tau, c.tau_p);
    s
}

/// Plain-text and JSON renderings; blank line between text blocks.
pub fn leaderboard_report(boards: &[Leaderboard]) -> Report {
    let text = boards.iter().map(render_text).collect::<Vec<_>>().join("\n");
    let json = if boards.is_empty() {
        String::new()
    } else {
        serde_json::to_string_pretty(boards).expect("leaderboards serialize") + "\n"
    };
    Report { text, json }
}

/// Published leaderboard tables: per criterion, each model's rank and
/// displayed metric under every rating method, plus the stated correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedTables {
    pub methods: Vec<String>,
    pub tables: Vec<PublishedTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedTable {
    pub criterion: Criterion,
    pub reference: String,
    pub rows: Vec<PublishedRow>,
    pub stated: BTreeMap<String, RankCorrelation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedRow {
    pub model: String,
    pub cells: BTreeMap<String, PublishedCell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PublishedCell {
    pub rank: u32,
    pub value: f64,
}

impl PublishedTables {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, AutoraterError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| AutoraterError::Fixture(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw).map_err(|e| AutoraterError::Fixture(format!("{}: {e}", path.display())))
    }

    pub fn table(&self, criterion: Criterion) -> Option<&PublishedTable> {
        self.tables.iter().find(|t| t.criterion == criterion)
    }
}

impl PublishedTable {
    /// A method's column as leaderboard values. Ranks are negated so that
    /// higher is better; the displayed metrics are rounded and can disagree
    /// with the printed order, so ranks are the faithful column.
    pub fn rank_values(&self, method: &str) -> Result<BTreeMap<String, f64>, AutoraterError> {
        self.rows
            .iter()
            .map(|r| {
                let cell = r
                    .cells
                    .get(method)
                    .ok_or_else(|| AutoraterError::Fixture(format!("row `{}` has no `{method}` cell", r.model)))?;
                Ok((r.model.clone(), -f64::from(cell.rank)))
            })
            .collect()
    }

    pub fn leaderboard(&self, method: &str) -> Result<Leaderboard, AutoraterError> {
        leaderboard_from_values(self.criterion, &self.rank_values(method)?, &self.rank_values(&self.reference)?)
    }
}
