//! Multi-agent egocentric memory and retrieval.
//!
//! Time-aligned caption streams from several agents are summarized into
//! per-agent interval memories and integrated into a shared, event-based
//! (4W1H) memory. Questions are answered by BM25 retrieval over the shared
//! memory followed by agent-wise sub-queries against individual memories.
//! The crate also contains the benchmark-construction tools (multi-span
//! grouping, LLM filter cascade) and an evaluation harness.
//!
//! Module map:
//!
//! - [`corpus`]: roster, timestamps, caption and QA file formats
//! - [`index`]: BM25 inverted index
//! - [`backend`]: generation/embedding interfaces, HTTP client, mock
//! - [`memory`]: per-agent memories, shared 4W1H memory, store files
//! - [`retrieval`]: the answer pipeline
//! - [`qafilter`]: multi-span grouping and filtering cascade
//! - [`harness`]: evaluation modes, latency, ablations
//! - [`fixture`]: synthetic planted-evidence corpus

pub mod backend;
pub mod corpus;
pub mod fixture;
pub mod harness;
pub mod index;
pub mod memory;
pub mod qafilter;
pub mod retrieval;

pub use backend::{BackendConfig, BackendError, Embedder, Generator, HttpBackend, MockBackend, PromptSet};
pub use corpus::{AgentId, CaptionRecord, Category, QaItem, Roster, TimeInterval, Timestamp};
pub use harness::{EvalConfig, EvalMode, EvalReport};
pub use index::{tokenize, Bm25Index, Bm25Params, ScoredMemory};
pub use memory::{build_memory, BuildOptions, EventRecord, MemoryRef, MemoryStore};
pub use retrieval::{answer_question, AnswerTrace, PipelineConfig};
