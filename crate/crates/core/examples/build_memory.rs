//! Builds per-agent and shared 4W1H memory from the planted corpus, saves
//! the store and loads it back.
//!
//! ```text
//! cargo run --example build_memory -- /tmp/egomem-store
//! ```

use std::path::PathBuf;

use egomem::fixture::planted_fixture;
use egomem::{build_memory, BuildOptions, MemoryStore, MockBackend};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("egomem-store"));
    let fx = planted_fixture(1);
    let opts = BuildOptions {
        max_inflight: 4,
        ..BuildOptions::default()
    };
    let (store, report) = build_memory(&MockBackend::new(1), &fx.roster, &fx.captions, &opts)?;
    println!(
        "{} captions -> {} buckets, {} agent entries, {} shared events",
        fx.captions.len(),
        report.buckets,
        report.agent_entries,
        report.events
    );
    for ev in store.shared().iter().take(3) {
        println!("  {}", ev.render());
    }

    store.save(&dir)?;
    let loaded = MemoryStore::load(&dir)?;
    println!(
        "saved to {} and reloaded {} events",
        dir.display(),
        loaded.shared().len()
    );
    Ok(())
}
