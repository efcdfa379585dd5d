//! Builds memory over the planted fixture with the mock backend and scores
//! every evaluation mode, then prints the ablation table.
//!
//! ```text
//! cargo run --example evaluate
//! ```

use egomem::fixture::planted_fixture;
use egomem::harness::{compare_ablations, run_eval};
use egomem::{build_memory, BuildOptions, EvalConfig, EvalMode, MockBackend, PromptSet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fx = planted_fixture(7);
    let backend = MockBackend::new(7);
    let prompts = PromptSet::default();
    let (store, report) = build_memory(&backend, &fx.roster, &fx.captions, &BuildOptions::default())?;
    println!(
        "built {} buckets, {} agent entries, {} events",
        report.buckets, report.agent_entries, report.events
    );

    for mode in [
        EvalMode::EgoMas,
        EvalMode::CaptionConcat,
        EvalMode::FlatBm25,
        EvalMode::Oracle,
    ] {
        let cfg = EvalConfig {
            mode,
            ..EvalConfig::default()
        };
        let r = run_eval(Some(&store), &fx.items, &backend, &prompts, &cfg)?;
        println!("== {mode:?}: {}/{} correct", r.correct, r.total);
        print!("{}", r.render_table());
    }

    let table = compare_ablations(&store, &fx.items, &backend, &prompts, &EvalConfig::default());
    print!("{}", table.render());
    Ok(())
}
