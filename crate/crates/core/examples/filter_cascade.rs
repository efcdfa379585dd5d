//! Runs the three-stage filter cascade over the planted questions.
//! Single-homed questions are answerable from one agent and get discarded;
//! multi-agent ones survive.
//!
//! ```text
//! cargo run --example filter_cascade
//! ```

use egomem::fixture::planted_fixture;
use egomem::qafilter::{run_cascade, CascadeBackends, CascadeConfig};
use egomem::{build_memory, BuildOptions, MockBackend, PromptSet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fx = planted_fixture(4);
    let primary = MockBackend::new(4);
    let (v1, v2) = (MockBackend::new(5), MockBackend::new(6));
    let (store, _) = build_memory(&primary, &fx.roster, &fx.captions, &BuildOptions::default())?;

    let backends = CascadeBackends {
        primary: &primary,
        validators: [&v1, &v2],
    };
    let out = run_cascade(
        &backends,
        &fx.items,
        &store,
        &PromptSet::default(),
        &CascadeConfig::default(),
    );
    for v in &out.log {
        println!(
            "{:<12} {:<12} {:?}  {}",
            v.qa_id,
            format!("{:?}", v.stage),
            v.decision,
            v.evidence
        );
    }
    println!(
        "kept {} of {} ({} quarantined)",
        out.kept.len(),
        fx.items.len(),
        out.quarantined.len()
    );
    Ok(())
}
