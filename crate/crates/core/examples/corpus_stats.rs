//! Segment raw paragraphs, aggregate rater votes, and print per-model stats.
//!
//! cargo run --example corpus_stats

use caption_critic::cli::{render_stats, stats_rows};
use caption_critic::corpus::{aggregate_corpus, load_corpus, CaptionRecord};

fn main() -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let record = CaptionRecord::from_paragraph(
        "demo",
        "demo-model",
        "demo.png",
        "Dr. Smith stands by a red door. He holds a sign that says \"Open!\" The street is wet.",
    );
    for (i, s) in record.sentence_texts().enumerate() {
        println!("sentence {i}: {s}");
    }

    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/stats/three_models.jsonl");
    let records = load_corpus(path)?;
    let aggregated = aggregate_corpus(&records)?;
    for (key, label) in aggregated.iter().take(4) {
        println!("{}#{} -> {:?} {:?}", key.caption_id, key.sentence_index, label.verdict, label.vote_counts);
    }
    print!("\n{}", render_stats(&stats_rows(&records)?));
    Ok(())
}
