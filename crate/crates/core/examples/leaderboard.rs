//! Rank models by an automatic judge and correlate with a reference ranking,
//! using the bundled published tables.
//!
//! cargo run --example leaderboard [method]

use caption_critic::autorater::{leaderboard_report, Criterion, PublishedTables};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let method = std::env::args().nth(1).unwrap_or_else(|| "Ours".into());
    let tables = PublishedTables::load(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/published_leaderboards.json"))?;
    let mut boards = Vec::new();
    for criterion in Criterion::ALL {
        let table = tables.table(criterion).ok_or("missing table")?;
        let board = table.leaderboard(&method)?;
        let stated = &table.stated[&method];
        println!(
            "{:<9} computed rho {:.3} tau {:.3} | stated rho {:.3} tau {:.3}",
            criterion.slug(),
            board.correlation.rho,
            board.correlation.tau,
            stated.rho,
            stated.tau
        );
        boards.push(board);
    }
    print!("\n{}", leaderboard_report(&boards).text);
    Ok(())
}
