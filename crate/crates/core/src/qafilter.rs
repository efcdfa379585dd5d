//! Benchmark construction: grouping single-span QA pairs into multi-span
//! candidates, and the zero-shot / single-agent / cross-model filter cascade.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::backend::{
    format_options, stable_hash, BackendError, Embedder, GenerationRequest, Generator, PromptSet, TaskKind,
};
use crate::corpus::{option_letter, AgentId, QaItem, Roster};
use crate::index::tokenize;
use crate::memory::MemoryStore;
use crate::retrieval::{answer_question, synthesize, PipelineConfig, RetrievalError};

pub const DEFAULT_DELTA: f64 = 0.85;
pub const DEFAULT_ZERO_SHOT_TRIALS: usize = 3;
/// Discard when the model is right in more than two of three trials.
pub const DEFAULT_DISCARD_MIN_CORRECT: usize = 3;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("zero vector")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("need at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("item {0} has no gold context")]
    MissingGoldContext(String),
    #[error("roster is empty")]
    EmptyRoster,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

// ---------------------------------------------------------------------------
// Multi-span grouping

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, FilterError> {
    if a.len() != b.len() {
        return Err(FilterError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(FilterError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedSample {
    pub qa_id: String,
    pub vector: Vec<f64>,
}

/// Embeds each item as `question; correct answer`.
pub fn embed_items<E: Embedder + ?Sized>(embedder: &E, items: &[QaItem]) -> Result<Vec<EmbeddedSample>, FilterError> {
    items
        .iter()
        .map(|it| {
            let text = format!("{} {}", it.question, it.correct_option());
            Ok(EmbeddedSample {
                qa_id: it.id.clone(),
                vector: embedder.embed(&text)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityGraph {
    pub node_count: usize,
    pub edges: Vec<(usize, usize)>,
    pub delta: f64,
}

impl SimilarityGraph {
    /// Edge `(i, j)`, `i < j`, whenever cosine similarity is at least `delta`.
    pub fn build(vectors: &[&[f64]], delta: f64) -> Result<Self, FilterError> {
        if let Some(first) = vectors.first() {
            for v in vectors {
                if v.len() != first.len() {
                    return Err(FilterError::DimensionMismatch(first.len(), v.len()));
                }
            }
        }
        let mut edges = Vec::new();
        for i in 0..vectors.len() {
            for j in i + 1..vectors.len() {
                if cosine(vectors[i], vectors[j])? >= delta {
                    edges.push((i, j));
                }
            }
        }
        Ok(SimilarityGraph {
            node_count: vectors.len(),
            edges,
            delta,
        })
    }

    /// Connected components with at least two members, each sorted, ordered
    /// by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut uf = UnionFind::new(self.node_count);
        for &(i, j) in &self.edges {
            uf.union(i, j);
        }
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for v in 0..self.node_count {
            by_root.entry(uf.find(v)).or_default().push(v);
        }
        let mut groups: Vec<Vec<usize>> = by_root.into_values().filter(|g| g.len() >= 2).collect();
        groups.sort_by_key(|g| g[0]);
        groups
    }
}

pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Groups of mutually reachable samples under the `delta` similarity graph.
pub fn group_multispan(samples: &[EmbeddedSample], delta: f64) -> Result<Vec<Vec<usize>>, FilterError> {
    if samples.len() < 2 {
        return Err(FilterError::TooFewSamples(samples.len()));
    }
    let vectors: Vec<&[f64]> = samples.iter().map(|s| s.vector.as_slice()).collect();
    Ok(SimilarityGraph::build(&vectors, delta)?.components())
}

// ---------------------------------------------------------------------------
// Filtering

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FilterStage {
    ZeroShot,
    SingleAgent,
    CrossModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Keep,
    Discard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub qa_id: String,
    pub stage: FilterStage,
    pub decision: Decision,
    pub evidence: String,
}

/// Case-insensitive whole-word containment on token boundaries.
pub fn contains_word(text: &str, word: &str) -> bool {
    let needle = tokenize(word);
    if needle.is_empty() {
        return false;
    }
    let hay = tokenize(text);
    hay.windows(needle.len()).any(|w| w == needle.as_slice())
}

/// Roster agents whose display name appears as a whole word in `text`, in
/// roster order.
pub fn extract_names(roster: &Roster, text: &str) -> Vec<AgentId> {
    roster
        .agents
        .iter()
        .filter(|a| contains_word(text, &a.name))
        .map(|a| a.id.clone())
        .collect()
}

/// Agents whose memories the single-agent filter consults: names in the
/// question and correct option, or one seeded random agent if none.
pub fn single_agent_candidates(roster: &Roster, item: &QaItem, seed: u64) -> Result<Vec<AgentId>, FilterError> {
    if roster.is_empty() {
        return Err(FilterError::EmptyRoster);
    }
    let text = format!("{} {}", item.question, item.correct_option());
    let named = extract_names(roster, &text);
    if !named.is_empty() {
        return Ok(named);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(0, &item.id));
    let pick = rng.gen_range(0..roster.len());
    Ok(vec![roster.agents[pick].id.clone()])
}

/// Asks the question without context `trials` times; discards when at
/// least `discard_min_correct` trials are correct.
pub fn zero_shot_filter<G: Generator + ?Sized>(
    backend: &G,
    prompts: &PromptSet,
    item: &QaItem,
    trials: usize,
    discard_min_correct: usize,
) -> Result<FilterVerdict, FilterError> {
    let mut letters = Vec::with_capacity(trials);
    let mut correct = 0;
    for _ in 0..trials {
        let (_, chosen) = synthesize(backend, prompts, TaskKind::FilterJudge, item, "")?;
        if chosen == Some(item.answer_index) {
            correct += 1;
        }
        letters.push(chosen.map_or('-', option_letter));
    }
    let decision = if correct >= discard_min_correct {
        Decision::Discard
    } else {
        Decision::Keep
    };
    Ok(FilterVerdict {
        qa_id: item.id.clone(),
        stage: FilterStage::ZeroShot,
        decision,
        evidence: format!(
            "trials={} correct={correct}/{trials} gold={}",
            letters.iter().collect::<String>(),
            option_letter(item.answer_index)
        ),
    })
}

/// Answers using one agent's memory at a time; discards if any single
/// agent suffices.
pub fn single_agent_filter<G: Generator + ?Sized>(
    store: &MemoryStore,
    backend: &G,
    prompts: &PromptSet,
    pipeline: &PipelineConfig,
    item: &QaItem,
    seed: u64,
) -> Result<FilterVerdict, FilterError> {
    let agents = single_agent_candidates(store.roster(), item, seed)?;
    let mut runs = Vec::new();
    let mut any_correct = false;
    for agent in agents {
        let mut cfg = pipeline.clone();
        cfg.ablations.restrict_agent = Some(agent.clone());
        cfg.ablations.disable_shared_memory = false;
        let trace = answer_question(store, backend, prompts, &cfg, item)?;
        let ok = trace.chosen_index == Some(item.answer_index);
        any_correct |= ok;
        runs.push(format!("{agent}:{}", if ok { "correct" } else { "wrong" }));
    }
    Ok(FilterVerdict {
        qa_id: item.id.clone(),
        stage: FilterStage::SingleAgent,
        decision: if any_correct { Decision::Discard } else { Decision::Keep },
        evidence: runs.join(","),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Judgment {
    Keep,
    Flag,
    Unparseable,
}

/// Reads a validator reply: exactly one of the words KEEP / FLAG.
pub fn parse_judgment(text: &str) -> Judgment {
    let toks = tokenize(text);
    let keep = toks.iter().any(|t| t == "keep");
    let flag = toks.iter().any(|t| t == "flag");
    match (keep, flag) {
        (true, false) => Judgment::Keep,
        (false, true) => Judgment::Flag,
        _ => Judgment::Unparseable,
    }
}

/// Two independent judges review the item against its generation-time
/// context; either flag (or an unparseable reply) discards it.
pub fn cross_model_validate(
    backends: [&dyn Generator; 2],
    prompts: &PromptSet,
    item: &QaItem,
    context: &str,
) -> Result<FilterVerdict, FilterError> {
    let options = format_options(&item.options);
    let answer = format!("{}) {}", option_letter(item.answer_index), item.correct_option());
    let prompt = prompts.render(
        TaskKind::Validate,
        &[
            ("context", context),
            ("question", &item.question),
            ("options", &options),
            ("answer", &answer),
        ],
    );
    let payload = json!({
        "question": item.question,
        "options": item.options,
        "answer_index": item.answer_index,
        "context": context,
    });
    let mut notes = Vec::new();
    let mut flagged = false;
    for (i, backend) in backends.iter().enumerate() {
        let gen = backend.generate(&GenerationRequest::new(
            TaskKind::Validate,
            prompt.clone(),
            payload.clone(),
        ))?;
        match parse_judgment(&gen.text) {
            Judgment::Keep => notes.push(format!("keep:backend{i}")),
            Judgment::Flag => {
                flagged = true;
                notes.push(format!("flag:backend{i}"));
            }
            Judgment::Unparseable => {
                flagged = true;
                notes.push(format!("unparseable:backend{i}"));
            }
        }
    }
    Ok(FilterVerdict {
        qa_id: item.id.clone(),
        stage: FilterStage::CrossModel,
        decision: if flagged { Decision::Discard } else { Decision::Keep },
        evidence: notes.join(","),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub zero_shot_trials: usize,
    pub discard_min_correct: usize,
    pub seed: u64,
    pub pipeline: PipelineConfig,
    pub parallelism: usize,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            zero_shot_trials: DEFAULT_ZERO_SHOT_TRIALS,
            discard_min_correct: DEFAULT_DISCARD_MIN_CORRECT,
            seed: 0,
            pipeline: PipelineConfig::default(),
            parallelism: 1,
        }
    }
}

pub struct CascadeBackends<'a> {
    /// Drives zero-shot and single-agent stages.
    pub primary: &'a dyn Generator,
    pub validators: [&'a dyn Generator; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Quarantined {
    pub qa_id: String,
    pub stage: FilterStage,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CascadeOutcome {
    pub kept: Vec<QaItem>,
    /// Ordered by input item, then stage.
    pub log: Vec<FilterVerdict>,
    pub quarantined: Vec<Quarantined>,
}

struct ItemOutcome {
    verdicts: Vec<FilterVerdict>,
    kept: bool,
    failure: Option<Quarantined>,
}

fn run_item(
    backends: &CascadeBackends<'_>,
    store: &MemoryStore,
    prompts: &PromptSet,
    config: &CascadeConfig,
    item: &QaItem,
) -> ItemOutcome {
    let mut verdicts = Vec::new();
    let stages = [FilterStage::ZeroShot, FilterStage::SingleAgent, FilterStage::CrossModel];
    for stage in stages {
        let result = match stage {
            FilterStage::ZeroShot => zero_shot_filter(
                backends.primary,
                prompts,
                item,
                config.zero_shot_trials,
                config.discard_min_correct,
            ),
            FilterStage::SingleAgent => {
                single_agent_filter(store, backends.primary, prompts, &config.pipeline, item, config.seed)
            }
            FilterStage::CrossModel => match &item.gold_context {
                Some(ctx) => cross_model_validate(backends.validators, prompts, item, ctx),
                None => Err(FilterError::MissingGoldContext(item.id.clone())),
            },
        };
        match result {
            Ok(v) => {
                let discard = v.decision == Decision::Discard;
                verdicts.push(v);
                if discard {
                    return ItemOutcome {
                        verdicts,
                        kept: false,
                        failure: None,
                    };
                }
            }
            Err(e) => {
                return ItemOutcome {
                    verdicts,
                    kept: false,
                    failure: Some(Quarantined {
                        qa_id: item.id.clone(),
                        stage,
                        error: e.to_string(),
                    }),
                }
            }
        }
    }
    ItemOutcome {
        verdicts,
        kept: true,
        failure: None,
    }
}

/// Applies ZeroShot, SingleAgent, CrossModel in order. An item discarded at
/// one stage never reaches the next; an item whose evaluation fails is
/// quarantined without stopping the run.
pub fn run_cascade(
    backends: &CascadeBackends<'_>,
    items: &[QaItem],
    store: &MemoryStore,
    prompts: &PromptSet,
    config: &CascadeConfig,
) -> CascadeOutcome {
    let outcomes: Vec<ItemOutcome> = if config.parallelism <= 1 {
        items
            .iter()
            .map(|it| run_item(backends, store, prompts, config, it))
            .collect()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(config.parallelism).build() {
            Ok(pool) => pool.install(|| {
                items
                    .par_iter()
                    .map(|it| run_item(backends, store, prompts, config, it))
                    .collect()
            }),
            Err(e) => {
                log::warn!("falling back to serial cascade: {e}");
                items
                    .iter()
                    .map(|it| run_item(backends, store, prompts, config, it))
                    .collect()
            }
        }
    };
    let mut out = CascadeOutcome::default();
    for (item, o) in items.iter().zip(outcomes) {
        out.log.extend(o.verdicts);
        if o.kept {
            out.kept.push(item.clone());
        }
        if let Some(q) = o.failure {
            out.quarantined.push(q);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockBackend, ScriptedGenerator};
    use crate::corpus::{AgentInfo, Category};

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[3.0, 4.0], &[3.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // dot=32, |a|=sqrt(14), |b|=sqrt(77)
        let expected = 32.0 / (14.0f64.sqrt() * 77.0f64.sqrt());
        let got = cosine(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.974632).abs() < 1e-6);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(FilterError::ZeroVector)));
        assert!(matches!(
            cosine(&[1.0], &[1.0, 0.0]),
            Err(FilterError::DimensionMismatch(1, 2))
        ));
    }

    #[test]
    fn components_drop_singletons() {
        let g = SimilarityGraph {
            node_count: 4,
            edges: vec![(0, 1), (1, 2)],
            delta: 0.5,
        };
        assert_eq!(g.components(), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn high_delta_gives_no_groups() {
        let s = vec![
            EmbeddedSample {
                qa_id: "a".into(),
                vector: vec![1.0, 0.0],
            },
            EmbeddedSample {
                qa_id: "b".into(),
                vector: vec![0.6, 0.8],
            },
        ];
        assert!(group_multispan(&s, 0.9).unwrap().is_empty());
        assert_eq!(group_multispan(&s, 0.6).unwrap(), vec![vec![0, 1]]);
        assert!(matches!(
            group_multispan(&s[..1], 0.5),
            Err(FilterError::TooFewSamples(1))
        ));
    }

    #[test]
    fn whole_word_names_only() {
        assert!(contains_word("Did Jake leave?", "jake"));
        assert!(!contains_word("Jakeson arrived", "Jake"));
        assert!(contains_word("Jake's cup", "Jake"));
    }

    fn roster() -> Roster {
        let names = [("A1_JAKE", "Jake"), ("A2_ALICE", "Alice"), ("A3_KATRINA", "Katrina")];
        Roster::new(
            names
                .iter()
                .map(|(id, n)| AgentInfo {
                    id: AgentId::new(*id).unwrap(),
                    name: n.to_string(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn item(id: &str, question: &str, answer: usize) -> QaItem {
        QaItem {
            id: id.into(),
            category: Category::SI,
            subtype: None,
            question: question.into(),
            options: [
                "opt a".into(),
                "opt b".into(),
                "opt c".into(),
                "opt d".into(),
                "opt e".into(),
            ],
            answer_index: answer,
            referenced_agents: vec![],
            referenced_intervals: vec![],
            gold_context: Some("ctx".into()),
            extra: Default::default(),
        }
    }

    #[test]
    fn name_extraction_uses_question_and_answer() {
        let mut it = item("q", "What did Jake give to Katrina?", 1);
        it.options[1] = "Alice's charger".into();
        let got = single_agent_candidates(&roster(), &it, 0).unwrap();
        let ids: Vec<_> = got.iter().map(AgentId::as_str).collect();
        assert_eq!(ids, ["A1_JAKE", "A2_ALICE", "A3_KATRINA"]);
    }

    #[test]
    fn random_agent_is_seeded() {
        let it = item("q-noname", "Who used the oven most?", 0);
        let a = single_agent_candidates(&roster(), &it, 42).unwrap();
        let b = single_agent_candidates(&roster(), &it, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1);
    }

    fn trial_script(
        pattern: &'static [bool],
        answer: usize,
    ) -> ScriptedGenerator<impl Fn(&GenerationRequest) -> Result<String, BackendError> + Send + Sync> {
        let counter = std::sync::atomic::AtomicUsize::new(0);
        ScriptedGenerator::new(move |_req: &GenerationRequest| {
            let i = counter.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            let idx = if pattern[i] { answer } else { (answer + 1) % 5 };
            Ok(format!("Answer: ({})", option_letter(idx)))
        })
    }

    #[test]
    fn zero_shot_three_of_three_discards() {
        let p = PromptSet::default();
        let it = item("q", "Q?", 2);
        let v = zero_shot_filter(&trial_script(&[true, true, true], 2), &p, &it, 3, 3).unwrap();
        assert_eq!(v.decision, Decision::Discard);
        assert!(v.evidence.contains("CCC"), "{}", v.evidence);
        let v = zero_shot_filter(&trial_script(&[true, true, false], 2), &p, &it, 3, 3).unwrap();
        assert_eq!(v.decision, Decision::Keep);
        let v = zero_shot_filter(&trial_script(&[false, false, false], 2), &p, &it, 3, 3).unwrap();
        assert_eq!(v.decision, Decision::Keep);
        let v = zero_shot_filter(&trial_script(&[true, true, false], 2), &p, &it, 3, 2).unwrap();
        assert_eq!(v.decision, Decision::Discard);
    }

    #[test]
    fn zero_shot_backend_error_aborts() {
        let failing = ScriptedGenerator::new(|_| Err(BackendError::Fatal("down".into())));
        assert!(zero_shot_filter(&failing, &PromptSet::default(), &item("q", "Q?", 0), 3, 3).is_err());
    }

    fn judge(
        reply: &'static str,
    ) -> ScriptedGenerator<impl Fn(&GenerationRequest) -> Result<String, BackendError> + Send + Sync> {
        ScriptedGenerator::new(move |_| Ok(reply.to_string()))
    }

    #[test]
    fn cross_model_rules() {
        let p = PromptSet::default();
        let it = item("q", "Q?", 0);
        let (keep, flag, garbled) = (judge("KEEP"), judge("FLAG: wrong answer"), judge("hmm, maybe?"));
        let v = cross_model_validate([&keep, &keep], &p, &it, "ctx").unwrap();
        assert_eq!(v.decision, Decision::Keep);
        let v = cross_model_validate([&keep, &flag], &p, &it, "ctx").unwrap();
        assert_eq!(v.decision, Decision::Discard);
        let v = cross_model_validate([&garbled, &keep], &p, &it, "ctx").unwrap();
        assert_eq!(v.decision, Decision::Discard);
        assert!(v.evidence.contains("unparseable:backend0"));
    }

    #[test]
    fn mock_validator_checks_context_support() {
        let p = PromptSet::default();
        let m = MockBackend::new(0);
        let mut it = item("q", "Q?", 1);
        it.options[1] = "purple kettle".into();
        let v = cross_model_validate([&m, &m], &p, &it, "Jake filled the purple kettle").unwrap();
        assert_eq!(v.decision, Decision::Keep);
        let v = cross_model_validate([&m, &m], &p, &it, "unrelated").unwrap();
        assert_eq!(v.decision, Decision::Discard);
    }

    #[test]
    fn judgment_parsing() {
        assert_eq!(parse_judgment("keep"), Judgment::Keep);
        assert_eq!(parse_judgment("Verdict: FLAG"), Judgment::Flag);
        assert_eq!(parse_judgment("KEEP or FLAG"), Judgment::Unparseable);
        assert_eq!(parse_judgment("keeper"), Judgment::Unparseable);
    }

    #[test]
    fn union_find_merges() {
        let mut uf = UnionFind::new(5);
        uf.union(0, 4);
        uf.union(4, 2);
        assert_eq!(uf.find(0), uf.find(2));
        assert_ne!(uf.find(1), uf.find(2));
    }
}
