//! Flag inaccurate sentences, revise each from its critique, and splice the
//! revisions back into the paragraph.
//!
//! cargo run --example critic_and_revise

use caption_critic::backend::{Capability, MockBackend, MockScript};
use caption_critic::corpus::load_corpus;
use caption_critic::revise::{critic_and_revise, self_judge, ReviseOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/walkthrough");
    let record = load_corpus(format!("{dir}/original.jsonl"))?.remove(0);
    let critic = MockBackend::new("critic", Capability::TokenScores, MockScript::load(format!("{dir}/critic.json"))?);
    let reviser = MockBackend::new("reviser", Capability::TokenScores, MockScript::load(format!("{dir}/reviser.json"))?);

    let opts = ReviseOptions::default();
    let revised = critic_and_revise(&critic, &reviser, &record, &opts)?;
    for edit in &revised.edits {
        println!("sentence {} ({:?})", edit.sentence_index, edit.status);
        println!("  was:      {}", edit.original_sentence);
        println!("  critique: {}", edit.critique);
        println!("  now:      {}", edit.revised_sentence.as_deref().unwrap_or("-"));
    }
    println!("\n{}", revised.revised_text);
    let report = self_judge(&critic, &revised, &opts)?;
    println!("\nself-judged: {:.0}% -> {:.0}%", 100.0 * report.original_accurate_pct, 100.0 * report.fixed_accurate_pct);
    Ok(())
}
