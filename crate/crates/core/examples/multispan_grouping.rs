//! Groups near-duplicate questions by embedding similarity.
//!
//! ```text
//! cargo run --example multispan_grouping -- 0.6
//! ```

use egomem::fixture::planted_fixture;
use egomem::qafilter::{embed_items, group_multispan, DEFAULT_DELTA};
use egomem::MockBackend;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let delta: f64 = match std::env::args().nth(1) {
        Some(s) => s.parse()?,
        None => DEFAULT_DELTA,
    };
    let fx = planted_fixture(0);
    let samples = embed_items(&MockBackend::new(0), &fx.items)?;
    let groups = group_multispan(&samples, delta)?;
    println!("{} items, delta {delta}: {} groups", samples.len(), groups.len());
    for g in groups {
        let ids: Vec<&str> = g.iter().map(|&i| samples[i].qa_id.as_str()).collect();
        println!("  {}", ids.join(", "));
    }
    Ok(())
}
