//! Per-agent interval memories and the event-based shared memory.
//!
//! Every `interval_minutes` bucket each agent's captions are summarized into
//! one [`AgentMemoryEntry`]; a manager step then integrates all agents'
//! entries for the bucket into 4W1H [`EventRecord`]s. Both families are
//! indexed with BM25.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::backend::{BackendError, GenerationRequest, Generator, PromptSet, TaskKind};
use crate::corpus::{
    bucket_by_interval, bucket_interval, AgentId, BucketKey, CaptionRecord, CorpusError, Roster, TimeInterval,
    Timestamp,
};
use crate::index::{Bm25Index, Bm25Params, IndexError};

pub const DEFAULT_INTERVAL_MINUTES: u32 = 10;
const STORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("backend failed for bucket {bucket}: {source}")]
    Backend {
        bucket: String,
        #[source]
        source: BackendError,
    },
    #[error("no memory: shared memory is empty")]
    NoMemory,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("store io error at {path}: {message}")]
    Store { path: String, message: String },
}

fn store_err(path: &Path, e: impl ToString) -> MemoryError {
    MemoryError::Store {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMemoryEntry {
    pub agent: AgentId,
    pub interval: TimeInterval,
    pub text: String,
}

/// One 4W1H shared-memory entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub id: String,
    pub source_interval: TimeInterval,
    pub when: String,
    pub what: String,
    #[serde(rename = "where")]
    pub location: String,
    pub who: Vec<String>,
    pub how: String,
}

impl EventRecord {
    /// Flat document text used for indexing and for answer context.
    pub fn render(&self) -> String {
        format!(
            "{} | {} | {} | {} | {}",
            self.when,
            self.what,
            self.location,
            self.who.join(", "),
            self.how
        )
    }
}

/// What a retrieval hit points at.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum MemoryRef {
    Shared {
        index: usize,
        id: String,
    },
    Agent {
        agent: AgentId,
        index: usize,
        bucket: Timestamp,
    },
}

impl MemoryRef {
    pub fn agent(&self) -> Option<&AgentId> {
        match self {
            MemoryRef::Agent { agent, .. } => Some(agent),
            MemoryRef::Shared { .. } => None,
        }
    }
}

/// A bucket that did not make it cleanly into memory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketIssue {
    pub bucket: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BuildReport {
    pub buckets: usize,
    pub agent_entries: usize,
    pub events: usize,
    /// Integration outputs that failed the 4W1H contract.
    pub rejected: Vec<BucketIssue>,
    /// Buckets whose integration produced no event at all.
    pub skipped: Vec<BucketIssue>,
    /// Non-fatal flags, e.g. names in `who` that are not on the roster.
    pub flagged: Vec<BucketIssue>,
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub interval_minutes: u32,
    pub max_inflight: usize,
    pub params: Bm25Params,
    pub prompts: PromptSet,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            interval_minutes: DEFAULT_INTERVAL_MINUTES,
            max_inflight: 1,
            params: Bm25Params::default(),
            prompts: PromptSet::default(),
        }
    }
}

fn backend_err(bucket: &Timestamp) -> impl Fn(BackendError) -> MemoryError + '_ {
    move |source| MemoryError::Backend {
        bucket: bucket.to_string(),
        source,
    }
}

/// Summarizes one agent's captions for one bucket. Returns `None` for an
/// empty record list.
pub fn summarize_agent_interval<G: Generator + ?Sized>(
    backend: &G,
    prompts: &PromptSet,
    roster: &Roster,
    bucket: TimeInterval,
    records: &[CaptionRecord],
) -> Result<Option<AgentMemoryEntry>, MemoryError> {
    let Some(first) = records.first() else {
        return Ok(None);
    };
    let agent = first.agent.clone();
    debug_assert!(records.iter().all(|r| r.agent == agent));
    let name = roster.name_of(&agent).unwrap_or(agent.as_str());
    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    let captions = records
        .iter()
        .map(|r| format!("[{}] {}", r.interval, r.text))
        .collect::<Vec<_>>()
        .join("\n");
    let bucket_label = bucket.start().to_string();
    let prompt = prompts.render(
        TaskKind::SummarizeAgent,
        &[("agent_name", name), ("bucket", &bucket_label), ("captions", &captions)],
    );
    let req = GenerationRequest::new(
        TaskKind::SummarizeAgent,
        prompt,
        json!({"agent": agent, "bucket": bucket_label, "texts": texts}),
    );
    let gen = backend.generate(&req).map_err(backend_err(&bucket.start()))?;
    let text = gen.text.trim().to_string();
    if text.is_empty() {
        return Err(MemoryError::Backend {
            bucket: bucket_label,
            source: BackendError::MalformedResponse("empty summary".into()),
        });
    }
    Ok(Some(AgentMemoryEntry {
        agent,
        interval: bucket,
        text,
    }))
}

/// Parsed integration output for one bucket.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Integration {
    pub events: Vec<EventRecord>,
    pub rejected: Vec<String>,
    pub flagged: Vec<String>,
}

fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let t = t.strip_prefix("```json").or_else(|| t.strip_prefix("```")).unwrap_or(t);
    t.strip_suffix("```").unwrap_or(t).trim()
}

fn field_str(obj: &serde_json::Map<String, Value>, key: &str) -> Result<String, String> {
    match obj.get(key) {
        None | Some(Value::Null) => Err(format!("missing field: {key}")),
        Some(Value::String(s)) => Ok(s.trim().to_string()),
        Some(other) => Ok(other.to_string()),
    }
}

/// Strictly parses a manager response into events for `bucket`.
///
/// Accepts `{"events": [...]}`, a bare array, or a single object. Events
/// missing any 4W1H key are rejected with a reason; names in `who` that
/// are not on the roster are kept and flagged.
pub fn parse_integration(text: &str, bucket: TimeInterval, roster: &Roster) -> Integration {
    let mut out = Integration::default();
    let value: Value = match serde_json::from_str(strip_fences(text)) {
        Ok(v) => v,
        Err(e) => {
            out.rejected.push(format!("unparseable response: {e}"));
            return out;
        }
    };
    let items = match value {
        Value::Object(ref o) if o.contains_key("events") => match o.get("events") {
            Some(Value::Array(a)) => a.clone(),
            _ => {
                out.rejected.push("events is not a list".into());
                return out;
            }
        },
        Value::Array(a) => a,
        obj @ Value::Object(_) => vec![obj],
        _ => {
            out.rejected.push("response is not a JSON object or list".into());
            return out;
        }
    };
    for item in items {
        let Value::Object(obj) = item else {
            out.rejected.push("event is not an object".into());
            continue;
        };
        let parsed = (|| -> Result<EventRecord, String> {
            let when = field_str(&obj, "when")?;
            let what = field_str(&obj, "what")?;
            let location = field_str(&obj, "where")?;
            let who = match obj.get("who") {
                None | Some(Value::Null) => return Err("missing field: who".into()),
                Some(Value::Array(a)) => a
                    .iter()
                    .map(|v| {
                        v.as_str()
                            .map(|s| s.trim().to_string())
                            .unwrap_or_else(|| v.to_string())
                    })
                    .filter(|s| !s.is_empty())
                    .collect(),
                Some(Value::String(s)) => s
                    .split(',')
                    .map(|p| p.trim().to_string())
                    .filter(|p| !p.is_empty())
                    .collect(),
                Some(_) => return Err("who is not a list".into()),
            };
            let how = field_str(&obj, "how")?;
            if what.is_empty() {
                return Err("empty field: what".into());
            }
            Ok(EventRecord {
                id: String::new(),
                source_interval: bucket,
                when,
                what,
                location,
                who,
                how,
            })
        })();
        match parsed {
            Ok(ev) => {
                for name in &ev.who {
                    if roster.by_name(name).is_none() {
                        out.flagged.push(format!("unknown name in who: {name}"));
                    }
                }
                if let Ok(ts) = ev.when.parse::<Timestamp>() {
                    if ts < bucket.start() || ts >= bucket.end() {
                        out.flagged.push(format!("when {ts} outside bucket"));
                    }
                }
                out.events.push(ev);
            }
            Err(reason) => out.rejected.push(reason),
        }
    }
    let prefix = bucket.start().to_string();
    for (k, ev) in out.events.iter_mut().enumerate() {
        ev.id = format!("{prefix}#{k}");
    }
    out
}

/// Integrates all agents' entries for one bucket into 4W1H events.
pub fn integrate_interval<G: Generator + ?Sized>(
    backend: &G,
    prompts: &PromptSet,
    roster: &Roster,
    bucket: TimeInterval,
    entries: &[AgentMemoryEntry],
) -> Result<Integration, MemoryError> {
    if entries.is_empty() {
        return Ok(Integration::default());
    }
    let named: Vec<Value> = entries
        .iter()
        .map(
            |e| json!({"agent": e.agent, "name": roster.name_of(&e.agent).unwrap_or(e.agent.as_str()), "text": e.text}),
        )
        .collect();
    let listing = named
        .iter()
        .map(|e| {
            format!(
                "- {}: {}",
                e["name"].as_str().unwrap_or_default(),
                e["text"].as_str().unwrap_or_default()
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let label = bucket.start().to_string();
    let prompt = prompts.render(TaskKind::IntegrateEvents, &[("bucket", &label), ("entries", &listing)]);
    let req = GenerationRequest::new(
        TaskKind::IntegrateEvents,
        prompt,
        json!({"bucket": label, "entries": named}),
    );
    let gen = backend.generate(&req).map_err(backend_err(&bucket.start()))?;
    Ok(parse_integration(&gen.text, bucket, roster))
}

/// Built memory: shared events, per-agent entries, and their BM25 indices.
#[derive(Debug, Clone)]
pub struct MemoryStore {
    roster: Roster,
    interval_minutes: u32,
    params: Bm25Params,
    shared: Vec<EventRecord>,
    per_agent: BTreeMap<AgentId, Vec<AgentMemoryEntry>>,
    shared_index: Bm25Index<MemoryRef>,
    agent_indices: BTreeMap<AgentId, Bm25Index<MemoryRef>>,
    flat_index: Option<Bm25Index<MemoryRef>>,
}

impl MemoryStore {
    /// Assembles a store and builds every index. Fails with
    /// [`MemoryError::NoMemory`] when `shared` is empty.
    pub fn from_parts(
        roster: Roster,
        interval_minutes: u32,
        params: Bm25Params,
        shared: Vec<EventRecord>,
        mut per_agent: BTreeMap<AgentId, Vec<AgentMemoryEntry>>,
    ) -> Result<Self, MemoryError> {
        if shared.is_empty() {
            return Err(MemoryError::NoMemory);
        }
        for entries in per_agent.values_mut() {
            entries.sort_by_key(|e| e.interval);
        }
        per_agent.retain(|_, v| !v.is_empty());
        let shared_index = Bm25Index::build(
            shared.iter().enumerate().map(|(i, ev)| {
                (
                    MemoryRef::Shared {
                        index: i,
                        id: ev.id.clone(),
                    },
                    ev.render(),
                )
            }),
            params,
        )
        .map_err(|e| match e {
            IndexError::EmptyCollection => MemoryError::NoMemory,
            other => other.into(),
        })?;
        let mut agent_indices = BTreeMap::new();
        for (agent, entries) in &per_agent {
            match Bm25Index::build(agent_docs(agent, entries), params) {
                Ok(idx) => {
                    agent_indices.insert(agent.clone(), idx);
                }
                Err(IndexError::EmptyCollection) => {}
                Err(e) => return Err(e.into()),
            }
        }
        let mut flat: Vec<(MemoryRef, String)> = per_agent
            .iter()
            .flat_map(|(agent, entries)| agent_docs(agent, entries))
            .collect();
        flat.sort_by_key(|(r, _)| match r {
            MemoryRef::Agent { agent, bucket, .. } => (*bucket, roster.position(agent).unwrap_or(usize::MAX)),
            MemoryRef::Shared { .. } => unreachable!(),
        });
        let flat_index = match Bm25Index::build(flat, params) {
            Ok(idx) => Some(idx),
            Err(IndexError::EmptyCollection) => None,
            Err(e) => return Err(e.into()),
        };
        Ok(MemoryStore {
            roster,
            interval_minutes,
            params,
            shared,
            per_agent,
            shared_index,
            agent_indices,
            flat_index,
        })
    }

    pub fn roster(&self) -> &Roster {
        &self.roster
    }

    pub fn interval_minutes(&self) -> u32 {
        self.interval_minutes
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn shared(&self) -> &[EventRecord] {
        &self.shared
    }

    pub fn per_agent(&self) -> &BTreeMap<AgentId, Vec<AgentMemoryEntry>> {
        &self.per_agent
    }

    pub fn agent_entries(&self, agent: &AgentId) -> &[AgentMemoryEntry] {
        self.per_agent.get(agent).map_or(&[], Vec::as_slice)
    }

    pub fn shared_index(&self) -> &Bm25Index<MemoryRef> {
        &self.shared_index
    }

    pub fn agent_index(&self, agent: &AgentId) -> Option<&Bm25Index<MemoryRef>> {
        self.agent_indices.get(agent)
    }

    /// All agents' entries in one index, chronological then roster order.
    pub fn flat_index(&self) -> Option<&Bm25Index<MemoryRef>> {
        self.flat_index.as_ref()
    }

    /// All agents' entries in chronological order (ties by roster order).
    pub fn chronological_entries(&self) -> Vec<&AgentMemoryEntry> {
        let mut all: Vec<&AgentMemoryEntry> = self.per_agent.values().flatten().collect();
        all.sort_by_key(|e| (e.interval, self.roster.position(&e.agent).unwrap_or(usize::MAX)));
        all
    }

    /// Text of the memory a reference points at.
    pub fn text_of(&self, r: &MemoryRef) -> String {
        match r {
            MemoryRef::Shared { index, .. } => self.shared[*index].render(),
            MemoryRef::Agent { agent, index, .. } => self.per_agent[agent][*index].text.clone(),
        }
    }

    /// Start of the interval a reference covers; used for chronological
    /// ordering of context.
    pub fn start_of(&self, r: &MemoryRef) -> Timestamp {
        match r {
            MemoryRef::Shared { index, .. } => self.shared[*index].source_interval.start(),
            MemoryRef::Agent { bucket, .. } => *bucket,
        }
    }

    /// A store in which only the first `m` roster agents exist. Shared
    /// memory is re-integrated from the retained agents' entries.
    pub fn restricted_to_first<G: Generator + ?Sized>(
        &self,
        backend: &G,
        prompts: &PromptSet,
        m: usize,
    ) -> Result<(MemoryStore, BuildReport), MemoryError> {
        let roster = self.roster.truncated(m);
        let per_agent: BTreeMap<AgentId, Vec<AgentMemoryEntry>> = self
            .per_agent
            .iter()
            .filter(|(a, _)| roster.contains(a))
            .map(|(a, v)| (a.clone(), v.clone()))
            .collect();
        let mut by_bucket: BTreeMap<TimeInterval, Vec<AgentMemoryEntry>> = BTreeMap::new();
        for e in per_agent.values().flatten() {
            by_bucket.entry(e.interval).or_default().push(e.clone());
        }
        let mut report = BuildReport {
            buckets: by_bucket.len(),
            agent_entries: per_agent.values().map(Vec::len).sum(),
            ..Default::default()
        };
        let mut shared = Vec::new();
        for (bucket, mut entries) in by_bucket {
            entries.sort_by_key(|e| roster.position(&e.agent));
            let integ = integrate_interval(backend, prompts, &roster, bucket, &entries)?;
            absorb(&mut report, &mut shared, bucket, integ);
        }
        report.events = shared.len();
        let store = MemoryStore::from_parts(roster, self.interval_minutes, self.params, shared, per_agent)?;
        Ok((store, report))
    }

    pub fn save(&self, dir: &Path) -> Result<(), MemoryError> {
        fs::create_dir_all(dir).map_err(|e| store_err(dir, e))?;
        let meta = StoreMeta {
            version: STORE_VERSION,
            interval_minutes: self.interval_minutes,
            params: self.params,
            roster: self.roster.clone(),
        };
        let meta_path = dir.join("store.json");
        fs::write(
            &meta_path,
            serde_json::to_string_pretty(&meta).expect("meta serializes"),
        )
        .map_err(|e| store_err(&meta_path, e))?;

        let mut body = String::new();
        for ev in &self.shared {
            let line = SharedLine {
                id: ev.id.clone(),
                bucket: ev.source_interval.start(),
                when: ev.when.clone(),
                what: ev.what.clone(),
                location: ev.location.clone(),
                who: ev.who.clone(),
                how: ev.how.clone(),
            };
            body.push_str(&serde_json::to_string(&line).expect("event serializes"));
            body.push('\n');
        }
        let shared_path = dir.join("shared.jsonl");
        fs::write(&shared_path, body).map_err(|e| store_err(&shared_path, e))?;

        for info in &self.roster.agents {
            let mut body = String::new();
            for e in self.agent_entries(&info.id) {
                let line = AgentLine {
                    bucket: e.interval.start(),
                    text: e.text.clone(),
                };
                body.push_str(&serde_json::to_string(&line).expect("entry serializes"));
                body.push('\n');
            }
            let path = dir.join(format!("agent_{}.jsonl", info.id));
            fs::write(&path, body).map_err(|e| store_err(&path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, MemoryError> {
        let meta_path = dir.join("store.json");
        let meta: StoreMeta =
            serde_json::from_str(&fs::read_to_string(&meta_path).map_err(|e| store_err(&meta_path, e))?)
                .map_err(|e| store_err(&meta_path, e))?;
        if meta.version != STORE_VERSION {
            return Err(store_err(
                &meta_path,
                format!("unsupported store version {}", meta.version),
            ));
        }
        let roster = Roster::new(meta.roster.agents)?;
        let width = meta.interval_minutes;

        let shared_path = dir.join("shared.jsonl");
        let mut shared = Vec::new();
        for (i, line) in fs::read_to_string(&shared_path)
            .map_err(|e| store_err(&shared_path, e))?
            .lines()
            .enumerate()
        {
            if line.trim().is_empty() {
                continue;
            }
            let l: SharedLine =
                serde_json::from_str(line).map_err(|e| store_err(&shared_path, format!("line {}: {e}", i + 1)))?;
            shared.push(EventRecord {
                id: l.id,
                source_interval: bucket_interval(l.bucket, width),
                when: l.when,
                what: l.what,
                location: l.location,
                who: l.who,
                how: l.how,
            });
        }

        let mut per_agent = BTreeMap::new();
        for info in &roster.agents {
            let path = dir.join(format!("agent_{}.jsonl", info.id));
            if !path.exists() {
                continue;
            }
            let mut entries = Vec::new();
            for (i, line) in fs::read_to_string(&path)
                .map_err(|e| store_err(&path, e))?
                .lines()
                .enumerate()
            {
                if line.trim().is_empty() {
                    continue;
                }
                let l: AgentLine =
                    serde_json::from_str(line).map_err(|e| store_err(&path, format!("line {}: {e}", i + 1)))?;
                entries.push(AgentMemoryEntry {
                    agent: info.id.clone(),
                    interval: bucket_interval(l.bucket, width),
                    text: l.text,
                });
            }
            per_agent.insert(info.id.clone(), entries);
        }
        MemoryStore::from_parts(roster, width, meta.params, shared, per_agent)
    }
}

fn agent_docs<'a>(
    agent: &'a AgentId,
    entries: &'a [AgentMemoryEntry],
) -> impl Iterator<Item = (MemoryRef, String)> + 'a {
    entries.iter().enumerate().map(move |(i, e)| {
        (
            MemoryRef::Agent {
                agent: agent.clone(),
                index: i,
                bucket: e.interval.start(),
            },
            e.text.clone(),
        )
    })
}

#[derive(Serialize, Deserialize)]
struct StoreMeta {
    version: u32,
    interval_minutes: u32,
    params: Bm25Params,
    roster: Roster,
}

#[derive(Serialize, Deserialize)]
struct SharedLine {
    id: String,
    bucket: Timestamp,
    when: String,
    what: String,
    #[serde(rename = "where")]
    location: String,
    who: Vec<String>,
    how: String,
}

#[derive(Serialize, Deserialize)]
struct AgentLine {
    bucket: Timestamp,
    text: String,
}

fn absorb(report: &mut BuildReport, shared: &mut Vec<EventRecord>, bucket: TimeInterval, integ: Integration) {
    let label = bucket.start().to_string();
    for reason in integ.rejected {
        report.rejected.push(BucketIssue {
            bucket: label.clone(),
            reason,
        });
    }
    for reason in integ.flagged {
        report.flagged.push(BucketIssue {
            bucket: label.clone(),
            reason,
        });
    }
    if integ.events.is_empty() {
        report.skipped.push(BucketIssue {
            bucket: label,
            reason: "no events".into(),
        });
    }
    shared.extend(integ.events);
}

struct BucketOutput {
    interval: TimeInterval,
    entries: Vec<AgentMemoryEntry>,
    integration: Integration,
}

fn process_bucket<G: Generator + ?Sized>(
    backend: &G,
    opts: &BuildOptions,
    roster: &Roster,
    key: BucketKey,
    per_agent: &BTreeMap<AgentId, Vec<CaptionRecord>>,
) -> Result<BucketOutput, MemoryError> {
    let interval = bucket_interval(key, opts.interval_minutes);
    let mut entries = Vec::new();
    for info in &roster.agents {
        if let Some(records) = per_agent.get(&info.id) {
            if let Some(entry) = summarize_agent_interval(backend, &opts.prompts, roster, interval, records)? {
                entries.push(entry);
            }
        }
    }
    let integration = integrate_interval(backend, &opts.prompts, roster, interval, &entries)?;
    Ok(BucketOutput {
        interval,
        entries,
        integration,
    })
}

/// Builds the full memory store from validated caption records.
pub fn build_memory<G: Generator + ?Sized>(
    backend: &G,
    roster: &Roster,
    records: &[CaptionRecord],
    opts: &BuildOptions,
) -> Result<(MemoryStore, BuildReport), MemoryError> {
    let buckets = bucket_by_interval(records, opts.interval_minutes)?;
    if buckets.is_empty() {
        return Err(MemoryError::NoMemory);
    }
    let keys: Vec<(&BucketKey, &BTreeMap<AgentId, Vec<CaptionRecord>>)> = buckets.iter().collect();
    let outputs: Vec<Result<BucketOutput, MemoryError>> = if opts.max_inflight <= 1 {
        keys.iter()
            .map(|(k, v)| process_bucket(backend, opts, roster, **k, v))
            .collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.max_inflight)
            .build()
            .map_err(|e| MemoryError::Store {
                path: "<thread pool>".into(),
                message: e.to_string(),
            })?;
        pool.install(|| {
            keys.par_iter()
                .map(|(k, v)| process_bucket(backend, opts, roster, **k, v))
                .collect()
        })
    };

    let mut report = BuildReport::default();
    let mut shared = Vec::new();
    let mut per_agent: BTreeMap<AgentId, Vec<AgentMemoryEntry>> = BTreeMap::new();
    for out in outputs {
        let out = out?;
        report.buckets += 1;
        report.agent_entries += out.entries.len();
        for e in out.entries {
            per_agent.entry(e.agent.clone()).or_default().push(e);
        }
        absorb(&mut report, &mut shared, out.interval, out.integration);
    }
    report.events = shared.len();
    let store = MemoryStore::from_parts(roster.clone(), opts.interval_minutes, opts.params, shared, per_agent)?;
    Ok((store, report))
}

/// Names on the roster that appear in a set of events' `who` lists.
pub fn who_names<'a>(events: impl IntoIterator<Item = &'a EventRecord>) -> BTreeSet<String> {
    events.into_iter().flat_map(|e| e.who.iter().cloned()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockBackend, ScriptedGenerator};
    use crate::corpus::{AgentInfo, CaptionKind};

    fn roster() -> Roster {
        Roster::new(vec![
            AgentInfo {
                id: AgentId::new("A1_JAKE").unwrap(),
                name: "Jake".into(),
            },
            AgentInfo {
                id: AgentId::new("A2_ALICE").unwrap(),
                name: "Alice".into(),
            },
        ])
        .unwrap()
    }

    fn rec(agent: &str, start: &str, end: &str, text: &str) -> CaptionRecord {
        CaptionRecord {
            agent: AgentId::new(agent).unwrap(),
            interval: TimeInterval::new(
                Timestamp::parse_clock(3, start).unwrap(),
                Timestamp::parse_clock(3, end).unwrap(),
            )
            .unwrap(),
            kind: CaptionKind::VisualCaption,
            text: text.into(),
        }
    }

    fn bucket() -> TimeInterval {
        bucket_interval(Timestamp::parse_clock(3, "12400000").unwrap(), 10)
    }

    #[test]
    fn mock_summary_entry() {
        let recs = vec![
            rec("A1_JAKE", "12400000", "12410000", "pours coffee"),
            rec("A1_JAKE", "12410000", "12420000", "talks to Alice"),
        ];
        let e = summarize_agent_interval(&MockBackend::new(0), &PromptSet::default(), &roster(), bucket(), &recs)
            .unwrap()
            .unwrap();
        assert_eq!(e.text, "pours coffee; talks to Alice");
        assert_eq!(e.interval, bucket());
        assert!(
            summarize_agent_interval(&MockBackend::new(0), &PromptSet::default(), &roster(), bucket(), &[])
                .unwrap()
                .is_none()
        );
    }

    #[test]
    fn backend_failure_carries_bucket_key() {
        let failing = ScriptedGenerator::new(|_| {
            Err(BackendError::TransientExhausted {
                attempts: 4,
                last: "timed out".into(),
            })
        });
        let recs = vec![rec("A1_JAKE", "12400000", "12410000", "x")];
        let err = summarize_agent_interval(&failing, &PromptSet::default(), &roster(), bucket(), &recs).unwrap_err();
        match err {
            MemoryError::Backend { bucket, source } => {
                assert_eq!(bucket, "DAY3_12400000");
                assert!(matches!(source, BackendError::TransientExhausted { attempts: 4, .. }));
            }
            other => panic!("{other:?}"),
        }
    }

    fn entry(agent: &str, text: &str) -> AgentMemoryEntry {
        AgentMemoryEntry {
            agent: AgentId::new(agent).unwrap(),
            interval: bucket(),
            text: text.into(),
        }
    }

    #[test]
    fn mock_integration_one_event() {
        let entries = vec![entry("A1_JAKE", "pours coffee"), entry("A2_ALICE", "reads a book")];
        let integ = integrate_interval(
            &MockBackend::new(0),
            &PromptSet::default(),
            &roster(),
            bucket(),
            &entries,
        )
        .unwrap();
        assert_eq!(integ.events.len(), 1);
        let ev = &integ.events[0];
        assert_eq!(ev.who, ["Jake", "Alice"]);
        assert_eq!(ev.when, "DAY3_12400000");
        assert_eq!(ev.what, "pours coffee reads a book");
        assert_eq!(ev.location, "unknown");
        assert_eq!(ev.how, "unknown");
        assert_eq!(
            ev.render(),
            "DAY3_12400000 | pours coffee reads a book | unknown | Jake, Alice | unknown"
        );
        assert!(integ.rejected.is_empty() && integ.flagged.is_empty());

        let single = integrate_interval(
            &MockBackend::new(0),
            &PromptSet::default(),
            &roster(),
            bucket(),
            &entries[..1],
        )
        .unwrap();
        assert_eq!(single.events[0].who, ["Jake"]);
    }

    #[test]
    fn mock_what_is_first_twenty_tokens() {
        let long: Vec<String> = (0..30).map(|i| format!("t{i}")).collect();
        let entries = vec![entry("A1_JAKE", &long.join(" "))];
        let integ = integrate_interval(
            &MockBackend::new(0),
            &PromptSet::default(),
            &roster(),
            bucket(),
            &entries,
        )
        .unwrap();
        assert_eq!(integ.events[0].what.split_whitespace().count(), 20);
    }

    #[test]
    fn missing_where_is_rejected() {
        let text = r#"{"events":[{"when":"noon","what":"lunch","who":["Jake"],"how":"together"}]}"#;
        let integ = parse_integration(text, bucket(), &roster());
        assert!(integ.events.is_empty());
        assert_eq!(integ.rejected, ["missing field: where"]);
    }

    #[test]
    fn unknown_names_flagged_not_dropped() {
        let text = "```json\n[{\"when\":\"noon\",\"what\":\"lunch\",\"where\":\"kitchen\",\"who\":\"Jake, Bob\",\"how\":\"x\"}]\n```";
        let integ = parse_integration(text, bucket(), &roster());
        assert_eq!(integ.events[0].who, ["Jake", "Bob"]);
        assert_eq!(integ.flagged, ["unknown name in who: Bob"]);
        assert_eq!(integ.events[0].id, "DAY3_12400000#0");
    }

    #[test]
    fn garbage_response_rejected() {
        let integ = parse_integration("I could not do it", bucket(), &roster());
        assert!(integ.events.is_empty());
        assert_eq!(integ.rejected.len(), 1);
    }

    #[test]
    fn empty_corpus_is_no_memory() {
        let err = build_memory(&MockBackend::new(0), &roster(), &[], &BuildOptions::default()).unwrap_err();
        assert!(matches!(err, MemoryError::NoMemory));
        assert_eq!(err.to_string(), "no memory: shared memory is empty");
    }

    #[test]
    fn all_rejected_buckets_end_in_no_memory() {
        let bad = ScriptedGenerator::new(|req: &GenerationRequest| match req.task {
            TaskKind::SummarizeAgent => Ok("summary".to_string()),
            _ => Ok(r#"{"events":[{"what":"x"}]}"#.to_string()),
        });
        let recs = vec![rec("A1_JAKE", "12400000", "12410000", "x")];
        let err = build_memory(&bad, &roster(), &recs, &BuildOptions::default()).unwrap_err();
        assert!(matches!(err, MemoryError::NoMemory));
    }

    #[test]
    fn build_and_reload_store() {
        let recs = vec![
            rec("A1_JAKE", "12400000", "12410000", "pours coffee"),
            rec("A2_ALICE", "12420000", "12430000", "reads a book"),
            rec("A1_JAKE", "12500000", "12510000", "washes cups"),
        ];
        let (store, report) = build_memory(&MockBackend::new(0), &roster(), &recs, &BuildOptions::default()).unwrap();
        assert_eq!(report.buckets, 2);
        assert_eq!(report.agent_entries, 3);
        assert_eq!(store.shared().len(), 2);
        assert_eq!(store.shared_index().doc_count(), 2);
        let jake = AgentId::new("A1_JAKE").unwrap();
        assert_eq!(store.agent_index(&jake).unwrap().doc_count(), 2);
        assert_eq!(store.flat_index().unwrap().doc_count(), 3);

        let dir = tempfile::tempdir().unwrap();
        store.save(dir.path()).unwrap();
        assert!(dir.path().join("shared.jsonl").exists());
        assert!(dir.path().join("agent_A1_JAKE.jsonl").exists());
        let back = MemoryStore::load(dir.path()).unwrap();
        assert_eq!(back.shared(), store.shared());
        assert_eq!(back.per_agent(), store.per_agent());
        assert_eq!(
            back.shared_index().top_n("coffee", 5),
            store.shared_index().top_n("coffee", 5)
        );
    }

    #[test]
    fn parallel_build_matches_serial() {
        let recs: Vec<CaptionRecord> = (0..6)
            .map(|i| {
                rec(
                    "A1_JAKE",
                    &format!("1{i}000000"),
                    &format!("1{i}010000"),
                    &format!("event {i}"),
                )
            })
            .collect();
        let serial = build_memory(&MockBackend::new(0), &roster(), &recs, &BuildOptions::default()).unwrap();
        let opts = BuildOptions {
            max_inflight: 4,
            ..Default::default()
        };
        let par = build_memory(&MockBackend::new(0), &roster(), &recs, &opts).unwrap();
        assert_eq!(serial.0.shared(), par.0.shared());
        assert_eq!(serial.1, par.1);
    }

    #[test]
    fn restriction_drops_later_agents() {
        let recs = vec![
            rec("A1_JAKE", "12400000", "12410000", "pours coffee"),
            rec("A2_ALICE", "12420000", "12430000", "reads a book"),
        ];
        let (store, _) = build_memory(&MockBackend::new(0), &roster(), &recs, &BuildOptions::default()).unwrap();
        let (small, _) = store
            .restricted_to_first(&MockBackend::new(0), &PromptSet::default(), 1)
            .unwrap();
        assert_eq!(small.roster().len(), 1);
        assert_eq!(small.shared()[0].who, ["Jake"]);
        assert!(small.agent_index(&AgentId::new("A2_ALICE").unwrap()).is_none());
        assert!(small.shared_index().top_n("book", 5).is_empty());
    }
}
