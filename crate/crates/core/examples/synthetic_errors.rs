//! Generate captions with injected errors and check that oracle critic and
//! reviser scripts restore them.
//!
//! cargo run --example synthetic_errors [count]

use caption_critic::backend::{Capability, MockBackend};
use caption_critic::revise::{critic_and_revise, synthetic, ReviseOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let count: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(20);
    let mut restored = 0;
    for seed in 0..count {
        let fx = synthetic::generate(seed);
        let critic = MockBackend::new("critic", Capability::TokenScores, fx.oracle_critic());
        let reviser = MockBackend::new("reviser", Capability::TokenScores, fx.oracle_reviser());
        let revised = critic_and_revise(&critic, &reviser, &fx.corrupted, &ReviseOptions::default())?;
        if seed == 0 {
            println!("corrupted: {}\nrestored:  {}\n", fx.corrupted.text, revised.revised_text);
        }
        restored += usize::from(revised.revised_text == fx.truth.text);
    }
    println!("{restored}/{count} fixtures restored");
    Ok(())
}
