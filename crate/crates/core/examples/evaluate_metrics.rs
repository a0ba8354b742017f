//! Score a critic against human labels: ROC-AUC, Macro-F1, and rank
//! correlation between two model orderings.
//!
//! cargo run --example evaluate_metrics

use caption_critic::metrics::{macro_f1, rank_correlation, roc_auc, BinaryEvalSet, Label};

fn main() -> Result<(), caption_critic::metrics::MetricsError> {
    use Label::{Accurate as A, Inaccurate as I};
    let scores = vec![0.95, 0.80, 0.62, 0.55, 0.40, 0.31, 0.12, 0.05];
    let predictions: Vec<Label> = scores.iter().map(|&s| if s > 0.5 { A } else { I }).collect();
    let truths = vec![A, A, I, A, A, I, I, I];
    let set = BinaryEvalSet::new(scores, predictions, truths)?;
    println!("ROC-AUC  {:.4}", roc_auc(&set)?);
    let f1 = macro_f1(&set)?;
    println!("MacroF1  {:.4} (accurate {:.4}, inaccurate {:.4})", f1.value, f1.f1_accurate, f1.f1_inaccurate);

    let human = [92.1, 88.4, 75.0, 71.3, 60.2, 55.8];
    let auto = [90.0, 85.5, 77.1, 65.0, 66.2, 50.3];
    let c = rank_correlation(&human, &auto)?;
    println!("spearman {:.3} (p {:.2e}), kendall {:.3} (p {:.2e})", c.rho, c.rho_p, c.tau, c.tau_p);
    Ok(())
}
