//! Meta-evaluation statistics: ROC-AUC, Macro-F1, Spearman's rho and
//! Kendall's tau-b with p-values.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("not defined: {0}")]
    NotDefined(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} observations, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Accurate,
    Inaccurate,
}

impl Label {
    pub fn flip(self) -> Self {
        match self {
            Label::Accurate => Label::Inaccurate,
            Label::Inaccurate => Label::Accurate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryEvalSet {
    pub scores: Vec<f64>,
    pub predictions: Vec<Label>,
    pub truths: Vec<Label>,
}

impl BinaryEvalSet {
    pub fn new(scores: Vec<f64>, predictions: Vec<Label>, truths: Vec<Label>) -> Result<Self, MetricsError> {
        if scores.len() != truths.len() {
            return Err(MetricsError::LengthMismatch(scores.len(), truths.len()));
        }
        if predictions.len() != truths.len() {
            return Err(MetricsError::LengthMismatch(predictions.len(), truths.len()));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(MetricsError::NonFinite(i));
        }
        Ok(Self {
            scores,
            predictions,
            truths,
        })
    }

    pub fn len(&self) -> usize {
        self.truths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truths.is_empty()
    }
}

/// 1-based ranks with ties sharing the mean of the positions they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let mean = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = mean;
        }
        i = j;
    }
    ranks
}

/// Area under the ROC curve with Accurate as the positive class, via the
/// Mann-Whitney rank sum.
pub fn roc_auc(set: &BinaryEvalSet) -> Result<f64, MetricsError> {
    let n_pos = set.truths.iter().filter(|&&t| t == Label::Accurate).count();
    let n_neg = set.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::NotDefined("ROC-AUC needs both classes among the truths".into()));
    }
    let ranks = average_ranks(&set.scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(&set.truths)
        .filter(|(_, &t)| t == Label::Accurate)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacroF1 {
    pub value: f64,
    pub f1_accurate: f64,
    pub f1_inaccurate: f64,
    pub warnings: Vec<String>,
}

fn class_f1(set: &BinaryEvalSet, class: Label) -> Option<f64> {
    let (mut tp, mut fp, mut fns) = (0usize, 0usize, 0usize);
    for (&p, &t) in set.predictions.iter().zip(&set.truths) {
        match (p == class, t == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fns += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fns;
    (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
}

/// Unweighted mean of the two per-class F1 scores. A class missing from both
/// predictions and truths scores 0 and adds a warning.
pub fn macro_f1(set: &BinaryEvalSet) -> Result<MacroF1, MetricsError> {
    if set.is_empty() {
        return Err(MetricsError::TooFew { need: 1, got: 0 });
    }
    let mut warnings = Vec::new();
    let mut f1 = |class: Label| {
        class_f1(set, class).unwrap_or_else(|| {
            warnings.push(format!("class {class:?} absent from predictions and truths; F1 set to 0"));
            0.0
        })
    };
    let a = f1(Label::Accurate);
    let i = f1(Label::Inaccurate);
    Ok(MacroF1 {
        value: (a + i) / 2.0,
        f1_accurate: a,
        f1_inaccurate: i,
        warnings,
    })
}

fn check_pair(xs: &[f64], ys: &[f64], need: usize) -> Result<(), MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < need {
        return Err(MetricsError::TooFew { need, got: xs.len() });
    }
    if let Some(i) = xs.iter().chain(ys).position(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite(i % xs.len()));
    }
    Ok(())
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Largest sample size for which the Spearman p-value is computed from the
/// exact permutation distribution.
pub const EXACT_SPEARMAN_MAX_N: usize = 8;

/// Spearman's rho (Pearson correlation of average ranks) and its two-sided
/// p-value.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), MetricsError> {
    check_pair(xs, ys, 3)?;
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let rho = pearson(&rx, &ry).ok_or_else(|| MetricsError::NotDefined("constant input to spearman".into()))?;
    let n = xs.len();
    let p = if n <= EXACT_SPEARMAN_MAX_N {
        exact_spearman_p(&rx, &ry, rho)
    } else {
        t_spearman_p(rho, n)
    };
    Ok((rho, p))
}

fn t_spearman_p(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - rho * rho;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = rho * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Share of all n! pairings whose |rho| reaches the observed |rho|.
fn exact_spearman_p(rx: &[f64], ry: &[f64], rho: f64) -> f64 {
    let target = rho.abs() - 1e-12;
    let mut perm = ry.to_vec();
    let n = perm.len();
    let mut hits = 0u64;
    let mut total = 0u64;
    let mut visit = |p: &[f64]| {
        total += 1;
        if pearson(rx, p).is_some_and(|r| r.abs() >= target) {
            hits += 1;
        }
    };
    // Heap's algorithm, iterative form
    let mut c = vec![0usize; n];
    visit(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    hits as f64 / total as f64
}

fn tie_groups(xs: &[f64]) -> Vec<f64> {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        if j - i > 1 {
            groups.push((j - i) as f64);
        }
        i = j;
    }
    groups
}

fn sign(a: f64, b: f64) -> i64 {
    match a.partial_cmp(&b).unwrap_or(std::cmp::Ordering::Equal) {
        std::cmp::Ordering::Less => -1,
        std::cmp::Ordering::Equal => 0,
        std::cmp::Ordering::Greater => 1,
    }
}

/// Kendall's tau-b and a two-sided p-value from the normal approximation
/// with the tie-corrected variance of the concordance statistic.
pub fn kendall_tau_b(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), MetricsError> {
    check_pair(xs, ys, 2)?;
    let n = xs.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    for i in 0..n {
        for j in (i + 1)..n {
            // f64::signum maps 0.0 to 1.0, so compare explicitly
            let s = sign(xs[i], xs[j]) * sign(ys[i], ys[j]);
            match s {
                1 => concordant += 1,
                -1 => discordant += 1,
                _ => {}
            }
        }
    }
    let nf = n as f64;
    let n0 = nf * (nf - 1.0) / 2.0;
    let tx = tie_groups(xs);
    let ty = tie_groups(ys);
    let n1: f64 = tx.iter().map(|t| t * (t - 1.0) / 2.0).sum();
    let n2: f64 = ty.iter().map(|t| t * (t - 1.0) / 2.0).sum();
    let denom = ((n0 - n1) * (n0 - n2)).sqrt();
    if denom == 0.0 {
        return Err(MetricsError::NotDefined("all-tied input to kendall_tau_b".into()));
    }
    let s = (concordant - discordant) as f64;
    let tau = (s / denom).clamp(-1.0, 1.0);

    let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
    let vt: f64 = tx.iter().map(|t| t * (t - 1.0) * (2.0 * t + 5.0)).sum();
    let vu: f64 = ty.iter().map(|u| u * (u - 1.0) * (2.0 * u + 5.0)).sum();
    let t1: f64 = tx.iter().map(|t| t * (t - 1.0)).sum();
    let u1: f64 = ty.iter().map(|u| u * (u - 1.0)).sum();
    let t2: f64 = tx.iter().map(|t| t * (t - 1.0) * (t - 2.0)).sum();
    let u2: f64 = ty.iter().map(|u| u * (u - 1.0) * (u - 2.0)).sum();
    let mut var = (v0 - vt - vu) / 18.0 + t1 * u1 / (2.0 * nf * (nf - 1.0));
    if n > 2 {
        var += t2 * u2 / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
    }
    let p = if var > 0.0 {
        let z = s.abs() / var.sqrt();
        statrs::function::erf::erfc(z / std::f64::consts::SQRT_2).min(1.0)
    } else {
        1.0
    };
    Ok((tau, p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankCorrelation {
    pub rho: f64,
    pub rho_p: f64,
    pub tau: f64,
    pub tau_p: f64,
}

pub fn rank_correlation(xs: &[f64], ys: &[f64]) -> Result<RankCorrelation, MetricsError> {
    let (rho, rho_p) = spearman(xs, ys)?;
    let (tau, tau_p) = kendall_tau_b(xs, ys)?;
    Ok(RankCorrelation { rho, rho_p, tau, tau_p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Accurate as A, Inaccurate as I};

    fn auc_of(pos: &[f64], neg: &[f64]) -> f64 {
        let scores: Vec<f64> = pos.iter().chain(neg).copied().collect();
        let truths: Vec<Label> = pos.iter().map(|_| A).chain(neg.iter().map(|_| I)).collect();
        let set = BinaryEvalSet::new(scores, truths.clone(), truths).unwrap();
        roc_auc(&set).unwrap()
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_of(&[0.9, 0.8], &[0.2, 0.1]), 1.0);
        assert_eq!(auc_of(&[0.9, 0.4], &[0.6, 0.1]), 0.75);
        assert_eq!(auc_of(&[0.3, 0.3], &[0.3, 0.3, 0.3]), 0.5);
        let one_class = BinaryEvalSet::new(vec![0.1, 0.2], vec![A, A], vec![A, A]).unwrap();
        assert!(matches!(roc_auc(&one_class), Err(MetricsError::NotDefined(_))));
    }

    #[test]
    fn f1_examples() {
        let perfect = BinaryEvalSet::new(vec![0.0; 4], vec![A, I, A, I], vec![A, I, A, I]).unwrap();
        assert_eq!(macro_f1(&perfect).unwrap().value, 1.0);

        let set = BinaryEvalSet::new(vec![0.0; 4], vec![A, I, I, I], vec![A, A, I, I]).unwrap();
        let m = macro_f1(&set).unwrap();
        assert!((m.f1_accurate - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1_inaccurate - 0.8).abs() < 1e-15);
        assert!((m.value - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);

        // constant predictor on balanced truths: F1_A = 2/3, F1_I = 0
        let degenerate = BinaryEvalSet::new(vec![0.0; 4], vec![A; 4], vec![A, A, I, I]).unwrap();
        assert!((macro_f1(&degenerate).unwrap().value - (2.0 / 3.0) / 2.0).abs() < 1e-15);

        let absent = BinaryEvalSet::new(vec![0.0; 2], vec![A, A], vec![A, A]).unwrap();
        let m = macro_f1(&absent).unwrap();
        assert_eq!(m.value, 0.5);
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman(&x, &x).unwrap().0, 1.0);
        let rev = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(spearman(&x, &rev).unwrap().0, -1.0);
        // exact: only the identity and reversal reach |rho| = 1 among 120
        assert!((spearman(&x, &x).unwrap().1 - 2.0 / 120.0).abs() < 1e-12);
        assert!(matches!(spearman(&x, &[1.0; 5]), Err(MetricsError::NotDefined(_))));
        assert!(matches!(spearman(&x[..2], &x[..2]), Err(MetricsError::TooFew { .. })));
    }

    #[test]
    fn spearman_t_branch() {
        // n = 10, rho = 1 - 6*2/(10*99) from one adjacent swap
        let x: Vec<f64> = (1..=10).map(f64::from).collect();
        let mut y = x.clone();
        y.swap(3, 4);
        let (rho, p) = spearman(&x, &y).unwrap();
        assert!((rho - (1.0 - 12.0 / 990.0)).abs() < 1e-12);
        assert!(p < 1e-6);
    }

    #[test]
    fn kendall_examples() {
        let (tau, _) = kendall_tau_b(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((tau - 2.0 / 3.0).abs() < 1e-15);
        let x = [1.0, 2.0, 3.0];
        assert_eq!(kendall_tau_b(&x, &x).unwrap().0, 1.0);
        assert!(matches!(
            kendall_tau_b(&[1.0, 1.0], &[1.0, 2.0]),
            Err(MetricsError::NotDefined(_))
        ));
    }

    #[test]
    fn kendall_p_matches_scipy() {
        // scipy.stats.kendalltau(..., method="asymptotic")
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        let y = [2.0, 1.0, 4.0, 3.0, 6.0, 5.0, 10.0, 7.0, 9.0, 8.0];
        let (tau, p) = kendall_tau_b(&x, &y).unwrap();
        assert!((tau - 0.688_888_888_888_888_8).abs() < 1e-12);
        assert!((p - 0.005_558_919_627_070_556).abs() < 1e-10);

        let x = [1.0, 1.0, 2.0, 3.0, 3.0, 4.0];
        let y = [1.0, 2.0, 2.0, 3.0, 4.0, 4.0];
        let (tau, p) = kendall_tau_b(&x, &y).unwrap();
        assert!((tau - 0.846_153_846_153_846_3).abs() < 1e-12);
        assert!((p - 0.026_567_513_335_842_154).abs() < 1e-10);
    }

    #[test]
    fn spearman_exact_p_small_n() {
        // scipy.stats.spearmanr gives the t-approximation 0.1041 here; the
        // exact permutation count is 16 of 120 with |rho| >= 0.8
        let (rho, p) = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        assert!((rho - 0.8).abs() < 1e-12);
        assert!((p - 16.0 / 120.0).abs() < 1e-12);
    }
}
