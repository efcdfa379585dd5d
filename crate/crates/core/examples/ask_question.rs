//! Answers one planted question and prints the retrieval trace.
//!
//! ```text
//! cargo run --example ask_question
//! ```

use egomem::corpus::option_letter;
use egomem::fixture::planted_fixture;
use egomem::{answer_question, build_memory, BuildOptions, MockBackend, PipelineConfig, PromptSet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fx = planted_fixture(2);
    let backend = MockBackend::new(2);
    let (store, _) = build_memory(&backend, &fx.roster, &fx.captions, &BuildOptions::default())?;
    let item = fx.items.iter().find(|it| it.referenced_agents.len() == 2).unwrap();

    let trace = answer_question(
        &store,
        &backend,
        &PromptSet::default(),
        &PipelineConfig::default(),
        item,
    )?;
    println!("Q: {}", item.question);
    for (i, o) in item.options.iter().enumerate() {
        println!("  {}) {o}", option_letter(i));
    }
    println!("system hits: {}", trace.system_hits.len());
    for q in &trace.agent_queries {
        let hits = trace.agent_hits.get(&q.agent).map_or(0, Vec::len);
        println!("sub-query to {}: {hits} hits above tau", q.agent);
    }
    println!("context: {} tokens", trace.context_tokens);
    let chosen = trace.chosen_index.map(option_letter);
    println!("answer: {chosen:?} (gold {})", option_letter(item.answer_index));
    Ok(())
}
