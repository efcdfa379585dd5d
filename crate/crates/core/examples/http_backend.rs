//! Talks to an OpenAI-compatible endpoint. Needs a reachable server and the
//! key variable named in the config.
//!
//! ```text
//! OPENAI_API_KEY=... cargo run --example http_backend -- https://api.openai.com/v1 gpt-4o-mini
//! ```

use egomem::backend::{GenerationRequest, TaskKind};
use egomem::{BackendConfig, Generator, HttpBackend};
use serde_json::{json, Value};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let (Some(endpoint_url), Some(model_name)) = (args.next(), args.next()) else {
        eprintln!("usage: http_backend ENDPOINT_URL MODEL");
        std::process::exit(2);
    };
    let config: BackendConfig = serde_json::from_value(json!({
        "endpoint_url": endpoint_url,
        "model_name": model_name,
        "max_retries": 2,
    }))?;
    let backend = HttpBackend::new(config)?;
    let req = GenerationRequest::new(
        TaskKind::Answer,
        "Answer with one letter. Which is a fruit? (A) chair (B) apple (C) river (D) song (E) lamp".into(),
        Value::Null,
    );
    let g = backend.generate(&req)?;
    println!(
        "{} (attempts {}, {} prompt tokens)",
        g.text.trim(),
        g.attempts,
        g.usage.prompt_tokens
    );
    Ok(())
}
