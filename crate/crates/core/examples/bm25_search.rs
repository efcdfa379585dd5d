//! Indexes a handful of memory snippets and runs a few queries.
//!
//! ```text
//! cargo run --example bm25_search -- "red apple"
//! ```

use egomem::{Bm25Index, Bm25Params};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let docs = [
        "Alice peeled a red apple in the kitchen",
        "Jake carried the green chair upstairs",
        "Tasha bought apples and a red scarf at the market",
        "Lucia tuned the guitar on the balcony",
        "Shure and Katrina rehearsed the song for the party",
    ];
    let index = Bm25Index::build(docs.iter().enumerate().map(|(i, d)| (i, *d)), Bm25Params::default())?;
    println!(
        "{} docs, avg length {:.2}, {} terms",
        index.doc_count(),
        index.avg_doc_len(),
        index.vocabulary_size()
    );

    let queries: Vec<String> = match std::env::args().nth(1) {
        Some(q) => vec![q],
        None => vec!["red apple".into(), "the party song".into(), "piano".into()],
    };
    for q in &queries {
        println!("query {q:?}");
        for hit in index.top_n(q, 3) {
            println!("  {:>7.4}  {}", hit.score, docs[hit.payload]);
        }
    }
    Ok(())
}
