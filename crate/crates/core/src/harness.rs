//! Evaluation: accuracy per category for the memory pipeline and the
//! baseline modes, latency sampling, and the ablation grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Generator, PromptSet, TaskKind};
use crate::corpus::{Category, QaItem};
use crate::memory::{MemoryError, MemoryStore};
use crate::retrieval::{answer_question, synthesize, truncate_to_budget, AnswerTrace, PipelineConfig, RetrievalError};

/// Caption chunks handed to the answerer by the flat BM25 baseline.
pub const FLAT_BM25_TOP_K: usize = 5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("io error at {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    #[serde(rename = "egomas")]
    EgoMas,
    #[serde(rename = "concat")]
    CaptionConcat,
    FlatBm25,
    Oracle,
}

impl std::str::FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "egomas" => Ok(EvalMode::EgoMas),
            "concat" => Ok(EvalMode::CaptionConcat),
            "flat-bm25" => Ok(EvalMode::FlatBm25),
            "oracle" => Ok(EvalMode::Oracle),
            other => Err(format!("unknown mode {other:?} (egomas|concat|flat-bm25|oracle)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store_path: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub mode: EvalMode,
    pub seed: u64,
    pub parallelism: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            qa_path: None,
            store_path: None,
            pipeline: PipelineConfig::default(),
            mode: EvalMode::EgoMas,
            seed: 0,
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CategoryScore {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_category: BTreeMap<Category, CategoryScore>,
    pub correct: usize,
    pub total: usize,
    pub overall_accuracy: f64,
    pub mean_latency_seconds: f64,
    pub mean_context_tokens: f64,
    pub traces: Vec<AnswerTrace>,
    pub config_echo: EvalConfig,
}

fn ratio(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

impl EvalReport {
    /// Scores traces against their items. `None` answers count as wrong.
    pub fn from_traces(items: &[QaItem], traces: Vec<AnswerTrace>, config: &EvalConfig) -> Self {
        let mut per: BTreeMap<Category, (usize, usize)> = BTreeMap::new();
        for (item, trace) in items.iter().zip(&traces) {
            let e = per.entry(item.category).or_default();
            e.1 += 1;
            if trace.chosen_index == Some(item.answer_index) {
                e.0 += 1;
            }
        }
        let per_category: BTreeMap<Category, CategoryScore> = per
            .into_iter()
            .map(|(c, (correct, total))| {
                (
                    c,
                    CategoryScore {
                        correct,
                        total,
                        accuracy: ratio(correct, total),
                    },
                )
            })
            .collect();
        let correct = per_category.values().map(|s| s.correct).sum();
        let total = per_category.values().map(|s| s.total).sum();
        let n = traces.len().max(1) as f64;
        EvalReport {
            overall_accuracy: ratio(correct, total),
            mean_latency_seconds: traces.iter().map(|t| t.latency_seconds).sum::<f64>() / n,
            mean_context_tokens: traces.iter().map(|t| t.context_tokens as f64).sum::<f64>() / n,
            per_category,
            correct,
            total,
            traces,
            config_echo: config.clone(),
        }
    }

    /// Report JSON with wall-clock fields zeroed, for reproducibility checks.
    pub fn canonical_json(&self) -> String {
        let mut copy = self.clone();
        copy.mean_latency_seconds = 0.0;
        for t in &mut copy.traces {
            t.latency_seconds = 0.0;
        }
        serde_json::to_string_pretty(&copy).expect("report serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8}{:>9}{:>8}{:>10}", "category", "correct", "total", "accuracy");
        for (c, s) in &self.per_category {
            let _ = writeln!(
                out,
                "{:<8}{:>9}{:>8}{:>9.2}%",
                c.to_string(),
                s.correct,
                s.total,
                s.accuracy * 100.0
            );
        }
        let _ = writeln!(
            out,
            "{:<8}{:>9}{:>8}{:>9.2}%",
            "Avg",
            self.correct,
            self.total,
            self.overall_accuracy * 100.0
        );
        let _ = writeln!(
            out,
            "mean latency {:.4}s, mean context {:.1} tokens",
            self.mean_latency_seconds, self.mean_context_tokens
        );
        out
    }

    /// Writes `path` (JSON) and a sibling `.txt` table.
    pub fn write(&self, path: &Path) -> Result<(), EvalError> {
        let io = |p: &Path, e: std::io::Error| EvalError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        }
        fs::write(path, self.to_json()).map_err(|e| io(path, e))?;
        let txt = path.with_extension("txt");
        fs::write(&txt, self.render_table()).map_err(|e| io(&txt, e))
    }
}

fn trace_for(item: &QaItem, context: String, raw: String, chosen: Option<usize>, started: Instant) -> AnswerTrace {
    AnswerTrace {
        question_id: item.id.clone(),
        system_hits: Vec::new(),
        agent_queries: Vec::new(),
        agent_hits: BTreeMap::new(),
        context_tokens: context.split_whitespace().count(),
        flags: if context.trim().is_empty() {
            vec!["no_context".into()]
        } else {
            Vec::new()
        },
        context,
        raw_answer: raw,
        chosen_index: chosen,
        latency_seconds: started.elapsed().as_secs_f64(),
        warnings: Vec::new(),
    }
}

/// Chronological concatenation of every agent's interval captions. When the
/// total exceeds `budget`, every caption is cut to the same maximum length,
/// chosen as large as the budget allows.
pub fn caption_concat_context(store: &MemoryStore, budget: usize) -> String {
    let entries = store.chronological_entries();
    let rows: Vec<(String, Vec<&str>)> = entries
        .iter()
        .map(|e| {
            let name = store.roster().name_of(&e.agent).unwrap_or(e.agent.as_str());
            (
                format!("[{} {}]", name, e.interval.start()),
                e.text.split_whitespace().collect(),
            )
        })
        .collect();
    let cost = |cap: usize| -> usize {
        rows.iter()
            .map(|(p, t)| p.split_whitespace().count() + t.len().min(cap))
            .sum()
    };
    let longest = rows.iter().map(|(_, t)| t.len()).max().unwrap_or(0);
    let cap = if cost(longest) <= budget {
        longest
    } else {
        // largest cap with cost(cap) <= budget; cost is monotone in cap
        let (mut lo, mut hi) = (0usize, longest);
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if cost(mid) <= budget {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    };
    let lines: Vec<String> = rows
        .iter()
        .map(|(p, t)| {
            let kept = &t[..t.len().min(cap)];
            if kept.is_empty() {
                p.clone()
            } else {
                format!("{p} {}", kept.join(" "))
            }
        })
        .collect();
    truncate_to_budget(&lines, budget)
}

fn answer_one<G: Generator + ?Sized>(
    store: Option<&MemoryStore>,
    backend: &G,
    prompts: &PromptSet,
    config: &EvalConfig,
    item: &QaItem,
) -> Result<AnswerTrace, EvalError> {
    let need_store = || store.ok_or_else(|| EvalError::Config("memory store is required for this mode".into()));
    match config.mode {
        EvalMode::EgoMas => Ok(answer_question(
            need_store()?,
            backend,
            prompts,
            &config.pipeline,
            item,
        )?),
        EvalMode::CaptionConcat => {
            let started = Instant::now();
            let ctx = caption_concat_context(need_store()?, config.pipeline.context_token_budget);
            let (raw, chosen) = synthesize(backend, prompts, TaskKind::Answer, item, &ctx)?;
            Ok(trace_for(item, ctx, raw, chosen, started))
        }
        EvalMode::FlatBm25 => {
            let started = Instant::now();
            let store = need_store()?;
            let hits = store
                .flat_index()
                .map(|i| i.top_n(&item.question, FLAT_BM25_TOP_K))
                .unwrap_or_default();
            let lines: Vec<String> = hits.iter().map(|h| store.text_of(&h.payload)).collect();
            let ctx = truncate_to_budget(&lines, config.pipeline.context_token_budget);
            let (raw, chosen) = synthesize(backend, prompts, TaskKind::Answer, item, &ctx)?;
            let mut t = trace_for(item, ctx, raw, chosen, started);
            t.system_hits = hits;
            Ok(t)
        }
        EvalMode::Oracle => {
            let started = Instant::now();
            let ctx = item
                .gold_context
                .clone()
                .ok_or_else(|| EvalError::Config(format!("item {} has no gold_context", item.id)))?;
            let (raw, chosen) = synthesize(backend, prompts, TaskKind::Answer, item, &ctx)?;
            Ok(trace_for(item, ctx, raw, chosen, started))
        }
    }
}

fn answer_all<G: Generator + ?Sized>(
    store: Option<&MemoryStore>,
    backend: &G,
    prompts: &PromptSet,
    config: &EvalConfig,
    items: &[QaItem],
) -> Result<Vec<AnswerTrace>, EvalError> {
    if config.parallelism <= 1 {
        return items
            .iter()
            .map(|it| answer_one(store, backend, prompts, config, it))
            .collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    pool.install(|| {
        items
            .par_iter()
            .map(|it| answer_one(store, backend, prompts, config, it))
            .collect()
    })
}

fn check_config(store: Option<&MemoryStore>, config: &EvalConfig, items: &[QaItem]) -> Result<(), EvalError> {
    if config.parallelism == 0 {
        return Err(EvalError::Config("parallelism must be >= 1".into()));
    }
    match config.mode {
        EvalMode::Oracle => {
            if let Some(it) = items.iter().find(|it| it.gold_context.is_none()) {
                return Err(EvalError::Config(format!(
                    "oracle mode: item {} has no gold_context",
                    it.id
                )));
            }
        }
        EvalMode::EgoMas => {
            if store.is_none() {
                return Err(EvalError::Config("memory store is required for egomas mode".into()));
            }
            config.pipeline.validate(store).map_err(|e| match e {
                RetrievalError::Config(m) => EvalError::Config(m),
                other => EvalError::Config(other.to_string()),
            })?;
        }
        EvalMode::CaptionConcat | EvalMode::FlatBm25 => {
            if store.is_none() {
                return Err(EvalError::Config("memory store is required for this mode".into()));
            }
        }
    }
    Ok(())
}

/// Answers every item once under `config` and scores the result.
///
/// With `pipeline.ablations.max_agents = Some(m)` the store is first
/// restricted to the first `m` roster agents (shared memory re-integrated
/// through `backend`).
pub fn run_eval<G: Generator + ?Sized>(
    store: Option<&MemoryStore>,
    items: &[QaItem],
    backend: &G,
    prompts: &PromptSet,
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    check_config(store, config, items)?;
    let restricted;
    let store = match (store, config.pipeline.ablations.max_agents) {
        (Some(s), Some(m)) if config.mode != EvalMode::Oracle => {
            restricted = s.restricted_to_first(backend, prompts, m)?.0;
            Some(&restricted)
        }
        (s, _) => s,
    };
    let traces = answer_all(store, backend, prompts, config, items)?;
    Ok(EvalReport::from_traces(items, traces, config))
}

/// Loads a QA file and store directory named in `config` and runs the eval.
pub fn run_eval_from_paths<G: Generator + ?Sized>(
    backend: &G,
    prompts: &PromptSet,
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let store = match &config.store_path {
        Some(p) => Some(MemoryStore::load(p)?),
        None => None,
    };
    let qa_path = config
        .qa_path
        .as_ref()
        .ok_or_else(|| EvalError::Config("qa_path is required".into()))?;
    let items = crate::corpus::load_qa(qa_path, store.as_ref().map(|s| s.roster()))
        .map_err(|e| EvalError::Config(e.to_string()))?;
    run_eval(store.as_ref(), &items, backend, prompts, config)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyStats {
    pub sample_ids: Vec<String>,
    pub mean_seconds: f64,
    pub p50_seconds: f64,
    pub p95_seconds: f64,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Wall-clock per-question latency over a seeded random sample. Memory
/// construction is not timed.
pub fn measure_latency<G: Generator + ?Sized>(
    store: Option<&MemoryStore>,
    items: &[QaItem],
    backend: &G,
    prompts: &PromptSet,
    config: &EvalConfig,
    sample_size: usize,
) -> Result<LatencyStats, EvalError> {
    if sample_size > items.len() {
        return Err(EvalError::Config(format!(
            "sample size {sample_size} exceeds dataset size {}",
            items.len()
        )));
    }
    check_config(store, config, items)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let picks = rand::seq::index::sample(&mut rng, items.len(), sample_size).into_vec();
    let mut secs = Vec::with_capacity(sample_size);
    let mut sample_ids = Vec::with_capacity(sample_size);
    for i in picks {
        let started = Instant::now();
        answer_one(store, backend, prompts, config, &items[i])?;
        secs.push(started.elapsed().as_secs_f64());
        sample_ids.push(items[i].id.clone());
    }
    let mean = if secs.is_empty() {
        0.0
    } else {
        secs.iter().sum::<f64>() / secs.len() as f64
    };
    let mut sorted = secs.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(LatencyStats {
        sample_ids,
        mean_seconds: mean,
        p50_seconds: percentile(&sorted, 50.0),
        p95_seconds: percentile(&sorted, 95.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationCell {
    pub label: String,
    pub shared_memory: bool,
    pub dynamic_retrieval: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agents: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overall_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub grid: Vec<AblationCell>,
    pub agent_sweep: Vec<AblationCell>,
}

impl AblationTable {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28}{:>10}", "configuration", "accuracy");
        for c in self.grid.iter().chain(&self.agent_sweep) {
            let acc = match (&c.overall_accuracy, &c.error) {
                (Some(a), _) => format!("{:.2}%", a * 100.0),
                (None, Some(_)) => "error".into(),
                _ => "-".into(),
            };
            let _ = writeln!(out, "{:<28}{:>10}", c.label, acc);
        }
        out
    }
}

fn cell(
    label: String,
    shared: bool,
    dynamic: bool,
    agents: Option<usize>,
    r: Result<EvalReport, EvalError>,
) -> AblationCell {
    match r {
        Ok(report) => AblationCell {
            label,
            shared_memory: shared,
            dynamic_retrieval: dynamic,
            agents,
            overall_accuracy: Some(report.overall_accuracy),
            error: None,
            report: Some(report),
        },
        Err(e) => AblationCell {
            label,
            shared_memory: shared,
            dynamic_retrieval: dynamic,
            agents,
            overall_accuracy: None,
            error: Some(e.to_string()),
            report: None,
        },
    }
}

/// Shared-memory x dynamic-retrieval grid plus an agent-count sweep
/// `1..=N`, all in the memory-pipeline mode.
pub fn compare_ablations<G: Generator + ?Sized>(
    store: &MemoryStore,
    items: &[QaItem],
    backend: &G,
    prompts: &PromptSet,
    base: &EvalConfig,
) -> AblationTable {
    let mut grid = Vec::new();
    for shared in [true, false] {
        for dynamic in [true, false] {
            let mut cfg = base.clone();
            cfg.mode = EvalMode::EgoMas;
            cfg.pipeline.ablations.disable_shared_memory = !shared;
            cfg.pipeline.ablations.disable_dynamic_retrieval = !dynamic;
            cfg.pipeline.ablations.max_agents = None;
            let label = format!(
                "shared={} dynamic={}",
                if shared { "on" } else { "off" },
                if dynamic { "on" } else { "off" }
            );
            grid.push(cell(
                label,
                shared,
                dynamic,
                None,
                run_eval(Some(store), items, backend, prompts, &cfg),
            ));
        }
    }
    let mut agent_sweep = Vec::new();
    for m in 1..=store.roster().len() {
        let mut cfg = base.clone();
        cfg.mode = EvalMode::EgoMas;
        cfg.pipeline.ablations.max_agents = Some(m);
        agent_sweep.push(cell(
            format!("agents={m}"),
            !cfg.pipeline.ablations.disable_shared_memory,
            !cfg.pipeline.ablations.disable_dynamic_retrieval,
            Some(m),
            run_eval(Some(store), items, backend, prompts, &cfg),
        ));
    }
    AblationTable { grid, agent_sweep }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AgentId;
    use crate::retrieval::Hit;

    fn item(cat: Category, answer: usize) -> QaItem {
        QaItem {
            id: format!("{cat}-{answer}"),
            category: cat,
            subtype: None,
            question: "q".into(),
            options: ["a".into(), "b".into(), "c".into(), "d".into(), "e".into()],
            answer_index: answer,
            referenced_agents: vec![],
            referenced_intervals: vec![],
            gold_context: None,
            extra: Default::default(),
        }
    }

    fn trace(chosen: Option<usize>) -> AnswerTrace {
        AnswerTrace {
            question_id: "x".into(),
            system_hits: Vec::<Hit>::new(),
            agent_queries: vec![],
            agent_hits: BTreeMap::<AgentId, Vec<Hit>>::new(),
            context: String::new(),
            raw_answer: String::new(),
            chosen_index: chosen,
            context_tokens: 10,
            latency_seconds: 0.5,
            flags: vec![],
            warnings: vec![],
        }
    }

    #[test]
    fn accounting_two_of_five() {
        let items = vec![
            item(Category::SI, 0),
            item(Category::SI, 1),
            item(Category::TC, 2),
            item(Category::ToM, 3),
            item(Category::EI, 4),
        ];
        let traces = vec![
            trace(Some(0)),
            trace(None),
            trace(Some(2)),
            trace(Some(0)),
            trace(Some(0)),
        ];
        let r = EvalReport::from_traces(&items, traces, &EvalConfig::default());
        assert_eq!((r.correct, r.total), (2, 5));
        assert_eq!(r.overall_accuracy, 0.4);
        assert_eq!(r.per_category[&Category::SI].accuracy, 0.5);
        assert_eq!(r.per_category.values().map(|s| s.total).sum::<usize>(), 5);
        assert_eq!(r.mean_context_tokens, 10.0);
        assert!(r.render_table().contains("40.00%"));
        assert!(r.canonical_json().contains("\"latency_seconds\": 0.0"));
    }

    #[test]
    fn oracle_requires_gold_context() {
        let cfg = EvalConfig {
            mode: EvalMode::Oracle,
            ..Default::default()
        };
        let m = crate::backend::MockBackend::new(0);
        let err = run_eval(None, &[item(Category::SI, 0)], &m, &PromptSet::default(), &cfg).unwrap_err();
        assert!(matches!(err, EvalError::Config(_)));
    }

    #[test]
    fn oracle_answers_from_gold_context() {
        let cfg = EvalConfig {
            mode: EvalMode::Oracle,
            ..Default::default()
        };
        let mut it = item(Category::TR, 3);
        it.options[3] = "violet umbrella".into();
        it.gold_context = Some("Lucia opened the violet umbrella".into());
        let m = crate::backend::MockBackend::new(0);
        let r = run_eval(None, &[it], &m, &PromptSet::default(), &cfg).unwrap();
        assert_eq!(r.overall_accuracy, 1.0);
    }

    #[test]
    fn retrieval_modes_need_store() {
        let m = crate::backend::MockBackend::new(0);
        for mode in [EvalMode::EgoMas, EvalMode::CaptionConcat, EvalMode::FlatBm25] {
            let cfg = EvalConfig {
                mode,
                ..Default::default()
            };
            assert!(run_eval(None, &[item(Category::SI, 0)], &m, &PromptSet::default(), &cfg).is_err());
        }
    }

    #[test]
    fn mode_names() {
        assert_eq!("flat-bm25".parse::<EvalMode>().unwrap(), EvalMode::FlatBm25);
        assert_eq!(serde_json::to_string(&EvalMode::EgoMas).unwrap(), "\"egomas\"");
        assert!("bogus".parse::<EvalMode>().is_err());
    }

    #[test]
    fn percentile_nearest_rank() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 50.0), 2.0);
        assert_eq!(percentile(&v, 95.0), 4.0);
    }
}
