//! Question answering over a [`MemoryStore`]: system-level BM25 retrieval
//! from shared memory, agent-wise sub-queries with top-k and a score
//! threshold, context assembly, and answer synthesis.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::backend::{format_options, BackendError, GenerationRequest, Generator, PromptSet, TaskKind};
use crate::corpus::{AgentId, QaItem, NUM_OPTIONS};
use crate::index::ScoredMemory;
use crate::memory::{MemoryRef, MemoryStore};

pub type Hit = ScoredMemory<MemoryRef>;

pub const DEFAULT_N: usize = 20;
pub const DEFAULT_K: usize = 5;
pub const DEFAULT_TAU: f64 = 10.0;
pub const DEFAULT_CONTEXT_BUDGET: usize = 8192;
pub const DEFAULT_MAX_AGENT_QUERIES: usize = 6;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ablations {
    #[serde(default)]
    pub disable_shared_memory: bool,
    #[serde(default)]
    pub disable_dynamic_retrieval: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restrict_agent: Option<AgentId>,
    /// Only the first `m` roster agents exist. The caller supplies a store
    /// restricted accordingly (see [`MemoryStore::restricted_to_first`]);
    /// the pipeline additionally refuses sub-queries for later agents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_agents: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub n: usize,
    pub k: usize,
    pub tau: f64,
    pub context_token_budget: usize,
    pub max_agent_queries: usize,
    #[serde(default)]
    pub ablations: Ablations,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n: DEFAULT_N,
            k: DEFAULT_K,
            tau: DEFAULT_TAU,
            context_token_budget: DEFAULT_CONTEXT_BUDGET,
            max_agent_queries: DEFAULT_MAX_AGENT_QUERIES,
            ablations: Ablations::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self, store: Option<&MemoryStore>) -> Result<(), RetrievalError> {
        let a = &self.ablations;
        if a.disable_shared_memory && a.disable_dynamic_retrieval {
            return Err(RetrievalError::Config(
                "shared memory and dynamic retrieval are both disabled: nothing to retrieve".into(),
            ));
        }
        if self.n == 0 || self.k == 0 {
            return Err(RetrievalError::Config("n and k must be >= 1".into()));
        }
        if self.tau.is_nan() || self.tau < 0.0 {
            return Err(RetrievalError::Config("tau must be >= 0".into()));
        }
        if a.max_agents == Some(0) {
            return Err(RetrievalError::Config("max_agents must be >= 1".into()));
        }
        if let (Some(agent), Some(store)) = (&a.restrict_agent, store) {
            if !store.roster().contains(agent) {
                return Err(RetrievalError::Config(format!(
                    "restrict_agent {agent} is not on the roster"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentQuery {
    pub agent: AgentId,
    pub sub_query: String,
}

/// Everything that happened while answering one question.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnswerTrace {
    pub question_id: String,
    pub system_hits: Vec<Hit>,
    pub agent_queries: Vec<AgentQuery>,
    pub agent_hits: BTreeMap<AgentId, Vec<Hit>>,
    /// The exact context passed to answer synthesis.
    pub context: String,
    pub raw_answer: String,
    pub chosen_index: Option<usize>,
    pub context_tokens: usize,
    pub latency_seconds: f64,
    pub flags: Vec<String>,
    pub warnings: Vec<String>,
}

impl AnswerTrace {
    /// Every memory reference in the trace.
    pub fn all_refs(&self) -> impl Iterator<Item = &MemoryRef> {
        self.system_hits
            .iter()
            .chain(self.agent_hits.values().flatten())
            .map(|h| &h.payload)
    }
}

pub fn retrieve_system(store: &MemoryStore, q: &str, n: usize) -> Vec<Hit> {
    store.shared_index().top_n(q, n)
}

/// Top-k from one agent's memory, keeping only hits scoring at least `tau`.
pub fn retrieve_agent(store: &MemoryStore, aq: &AgentQuery, k: usize, tau: f64) -> Vec<Hit> {
    match store.agent_index(&aq.agent) {
        Some(idx) => idx
            .top_n(&aq.sub_query, k)
            .into_iter()
            .filter(|h| h.score >= tau)
            .collect(),
        None => Vec::new(),
    }
}

fn hit_names(store: &MemoryStore, hits: &[Hit]) -> Vec<String> {
    let mut names = Vec::new();
    for h in hits {
        match &h.payload {
            MemoryRef::Shared { index, .. } => names.extend(store.shared()[*index].who.iter().cloned()),
            MemoryRef::Agent { agent, .. } => {
                if let Some(n) = store.roster().name_of(agent) {
                    names.push(n.to_string());
                }
            }
        }
    }
    let mut seen = BTreeSet::new();
    names.retain(|n| seen.insert(n.clone()));
    names
}

fn render_hits(store: &MemoryStore, hits: &[Hit]) -> String {
    hits.iter()
        .map(|h| format!("- {}", store.text_of(&h.payload)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses a `{"queries": [{"agent": .., "query": ..}]}` response (or a bare
/// list). Agents may be named by id or display name.
pub fn parse_agent_queries(
    text: &str,
    store: &MemoryStore,
    fallback_query: &str,
    cap: usize,
) -> Result<(Vec<AgentQuery>, Vec<String>), BackendError> {
    let trimmed = text.trim();
    let trimmed = trimmed
        .strip_prefix("```json")
        .or_else(|| trimmed.strip_prefix("```"))
        .unwrap_or(trimmed);
    let trimmed = trimmed.strip_suffix("```").unwrap_or(trimmed).trim();
    let value: Value =
        serde_json::from_str(trimmed).map_err(|e| BackendError::MalformedResponse(format!("agent queries: {e}")))?;
    let list = match &value {
        Value::Array(a) => a.clone(),
        Value::Object(o) => match o.get("queries") {
            Some(Value::Array(a)) => a.clone(),
            _ => {
                return Err(BackendError::MalformedResponse(
                    "agent queries: missing queries list".into(),
                ))
            }
        },
        _ => return Err(BackendError::MalformedResponse("agent queries: not a list".into())),
    };
    let mut warnings = Vec::new();
    let mut out: Vec<AgentQuery> = Vec::new();
    for item in list {
        let agent_key = item.get("agent").and_then(Value::as_str).unwrap_or_default();
        let Some(info) = store.roster().resolve(agent_key) else {
            warnings.push(format!("dropped query for unknown agent {agent_key:?}"));
            continue;
        };
        let sub_query = item
            .get("query")
            .and_then(Value::as_str)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .unwrap_or(fallback_query)
            .to_string();
        let aq = AgentQuery {
            agent: info.id.clone(),
            sub_query,
        };
        if !out.contains(&aq) {
            out.push(aq);
        }
    }
    if out.len() > cap {
        warnings.push(format!("truncated {} agent queries to {cap}", out.len()));
        out.truncate(cap);
    }
    Ok((out, warnings))
}

/// Asks the backend which agents to consult and with what sub-queries.
pub fn generate_agent_queries<G: Generator + ?Sized>(
    backend: &G,
    prompts: &PromptSet,
    store: &MemoryStore,
    q: &str,
    system_hits: &[Hit],
    cap: usize,
) -> Result<(Vec<AgentQuery>, Vec<String>), RetrievalError> {
    let roster = store.roster();
    let agents = roster
        .agents
        .iter()
        .map(|a| a.name.as_str())
        .collect::<Vec<_>>()
        .join(", ");
    let context = render_hits(store, system_hits);
    let prompt = prompts.render(
        TaskKind::AgentQueries,
        &[("agents", &agents), ("question", q), ("context", &context)],
    );
    let payload = json!({
        "question": q,
        "roster": roster.agents.iter().map(|a| json!({"id": a.id, "name": a.name})).collect::<Vec<_>>(),
        "hit_who": hit_names(store, system_hits),
    });
    let gen = backend.generate(&GenerationRequest::new(TaskKind::AgentQueries, prompt, payload))?;
    Ok(parse_agent_queries(&gen.text, store, q, cap)?)
}

fn is_choice_terminator(c: Option<char>) -> bool {
    match c {
        None => true,
        Some(c) => matches!(c, ')' | '.' | ':') || c.is_whitespace(),
    }
}

/// Maps a free-text answer to an option index.
///
/// 1. the first standalone letter `A`-`E` followed by `)`, `.`, `:`,
///    whitespace or end of text;
/// 2. otherwise the option whose full text occurs in `raw`
///    (case-insensitive; longest match wins);
/// 3. otherwise `None`.
pub fn extract_choice(raw: &str, options: &[String]) -> Option<usize> {
    let chars: Vec<char> = raw.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if !('A'..='E').contains(&c) {
            continue;
        }
        let standalone = i == 0 || !chars[i - 1].is_alphanumeric();
        if standalone && is_choice_terminator(chars.get(i + 1).copied()) {
            return Some((c as u8 - b'A') as usize);
        }
    }
    let lower = raw.to_lowercase();
    let mut best: Option<(usize, usize)> = None;
    for (i, opt) in options.iter().enumerate() {
        let o = opt.trim().to_lowercase();
        if !o.is_empty() && lower.contains(&o) && best.is_none_or(|(_, len)| o.len() > len) {
            best = Some((i, o.len()));
        }
    }
    best.map(|(i, _)| i)
}

/// Joins context sections line by line, cutting from the end so that the
/// result has at most `budget` whitespace tokens.
pub fn truncate_to_budget(lines: &[String], budget: usize) -> String {
    let mut out: Vec<String> = Vec::new();
    let mut used = 0;
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if used + toks.len() <= budget {
            used += toks.len();
            out.push(line.clone());
        } else {
            let room = budget - used;
            if room > 0 {
                out.push(toks[..room].join(" "));
            }
            break;
        }
    }
    out.join("\n")
}

fn hit_line(store: &MemoryStore, h: &Hit) -> String {
    match &h.payload {
        MemoryRef::Shared { .. } => format!("[shared] {}", store.text_of(&h.payload)),
        MemoryRef::Agent { agent, bucket, .. } => format!(
            "[{} {}] {}",
            store.roster().name_of(agent).unwrap_or(agent.as_str()),
            bucket,
            store.text_of(&h.payload)
        ),
    }
}

/// System hits in rank order, then agent hits grouped per agent (in
/// `agent_order`) and chronological within each group.
pub fn assemble_context(
    store: &MemoryStore,
    system_hits: &[Hit],
    agent_order: &[AgentId],
    agent_hits: &BTreeMap<AgentId, Vec<Hit>>,
    budget: usize,
) -> String {
    let mut lines: Vec<String> = system_hits.iter().map(|h| hit_line(store, h)).collect();
    for agent in agent_order {
        if let Some(hits) = agent_hits.get(agent) {
            let mut group: Vec<&Hit> = hits.iter().collect();
            group.sort_by_key(|h| (store.start_of(&h.payload), h.doc_id));
            lines.extend(group.into_iter().map(|h| hit_line(store, h)));
        }
    }
    truncate_to_budget(&lines, budget)
}

/// Calls the backend with a question, its options and a context.
pub fn synthesize<G: Generator + ?Sized>(
    backend: &G,
    prompts: &PromptSet,
    task: TaskKind,
    item: &QaItem,
    context: &str,
) -> Result<(String, Option<usize>), BackendError> {
    let options = format_options(&item.options);
    let shown_context = if context.trim().is_empty() { "(none)" } else { context };
    let prompt = prompts.render(
        task,
        &[
            ("question", &item.question),
            ("options", &options),
            ("context", shown_context),
        ],
    );
    let payload = json!({"question": item.question, "options": item.options, "context": context});
    let gen = backend.generate(&GenerationRequest::new(task, prompt, payload))?;
    let chosen = extract_choice(&gen.text, &item.options);
    debug_assert!(chosen.is_none_or(|c| c < NUM_OPTIONS));
    Ok((gen.text, chosen))
}

fn merge_hits(into: &mut Vec<Hit>, new: Vec<Hit>, k: usize) {
    for h in new {
        if let Some(existing) = into.iter_mut().find(|e| e.payload == h.payload) {
            if h.score > existing.score {
                existing.score = h.score;
            }
        } else {
            into.push(h);
        }
    }
    into.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.doc_id.cmp(&b.doc_id)));
    into.truncate(k);
}

/// Runs the full pipeline for one question.
pub fn answer_question<G: Generator + ?Sized>(
    store: &MemoryStore,
    backend: &G,
    prompts: &PromptSet,
    config: &PipelineConfig,
    item: &QaItem,
) -> Result<AnswerTrace, RetrievalError> {
    config.validate(Some(store))?;
    let started = Instant::now();
    let ab = &config.ablations;
    let q = item.question.as_str();

    let system_hits = match (&ab.restrict_agent, ab.disable_shared_memory) {
        (Some(agent), _) => store
            .agent_index(agent)
            .map(|i| i.top_n(q, config.n))
            .unwrap_or_default(),
        (None, true) => store.flat_index().map(|i| i.top_n(q, config.n)).unwrap_or_default(),
        (None, false) => retrieve_system(store, q, config.n),
    };

    let mut warnings = Vec::new();
    let mut agent_queries = Vec::new();
    let mut agent_hits: BTreeMap<AgentId, Vec<Hit>> = BTreeMap::new();
    let mut agent_order: Vec<AgentId> = Vec::new();
    if !ab.disable_dynamic_retrieval {
        let (queries, w) = generate_agent_queries(backend, prompts, store, q, &system_hits, config.max_agent_queries)?;
        warnings.extend(w);
        let allowed = |a: &AgentId| -> bool {
            if let Some(r) = &ab.restrict_agent {
                return a == r;
            }
            if let Some(m) = ab.max_agents {
                return store.roster().position(a).is_some_and(|p| p < m);
            }
            true
        };
        for aq in queries {
            if !allowed(&aq.agent) {
                warnings.push(format!("skipped query for excluded agent {}", aq.agent));
                continue;
            }
            let hits = retrieve_agent(store, &aq, config.k, config.tau);
            if !agent_order.contains(&aq.agent) {
                agent_order.push(aq.agent.clone());
            }
            merge_hits(agent_hits.entry(aq.agent.clone()).or_default(), hits, config.k);
            agent_queries.push(aq);
        }
        agent_hits.retain(|_, v| !v.is_empty());
    }

    let context = assemble_context(
        store,
        &system_hits,
        &agent_order,
        &agent_hits,
        config.context_token_budget,
    );
    let mut flags = Vec::new();
    if system_hits.is_empty() && agent_hits.is_empty() {
        flags.push("no_context".to_string());
    }
    let (raw_answer, chosen_index) = synthesize(backend, prompts, TaskKind::Answer, item, &context)?;
    Ok(AnswerTrace {
        question_id: item.id.clone(),
        context_tokens: context.split_whitespace().count(),
        system_hits,
        agent_queries,
        agent_hits,
        context,
        raw_answer,
        chosen_index,
        latency_seconds: started.elapsed().as_secs_f64(),
        flags,
        warnings,
    })
}
