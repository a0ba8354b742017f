//! Judge every sentence of a caption with a scripted backend, once through
//! token scores and once through sampled votes.
//!
//! cargo run --example judge_sentences

use caption_critic::backend::{Capability, MockBackend, MockReply, MockScript};
use caption_critic::classify::{judge_caption, JudgeOptions};
use caption_critic::corpus::CaptionRecord;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let record = CaptionRecord::from_paragraph(
        "street",
        "demo-model",
        "https://images.example/street.jpg",
        "A red bus waits at the stop. Three people board it. The sky is purple.",
    );
    let script = MockScript::default()
        .classify("The sky is purple.", false)
        .critique("The sky is purple.", "The sky is grey and overcast.")
        .critique("Three people board it.", "Only two people board the bus.")
        .rule(
            ["<TARGET>Three people board it.</TARGET>"],
            MockReply {
                scores: Some([-0.9, -0.5]),
                ..MockReply::samples(["Yes", "No", "no", "Yes.", "No"])
            },
        )
        .with_default(MockReply::verdict(true));

    for capability in [Capability::TokenScores, Capability::SampleOnly] {
        let backend = MockBackend::new("critic", capability, script.clone());
        let judged = judge_caption(&backend, &record, &JudgeOptions::default().with_critique())?;
        println!("{capability:?}: response_correct = {}", judged.response_correct);
        for j in &judged.judgments {
            println!(
                "  [{}] score {:.3} {:?} {}",
                j.sentence_index,
                j.score.unwrap_or(f64::NAN),
                j.label,
                j.critique.as_deref().unwrap_or("")
            );
        }
        println!("  {} backend calls", backend.calls().len());
    }
    Ok(())
}
