//! Command-line front end for the egomem library.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use egomem::backend::{BackendError, Embedder, Generation, GenerationRequest, Generator};
use egomem::corpus::{load_captions, load_qa, Category, QaItem, Roster};
use egomem::fixture::planted_fixture;
use egomem::harness::{compare_ablations, run_eval};
use egomem::qafilter::{embed_items, group_multispan, run_cascade, CascadeBackends, CascadeConfig, DEFAULT_DELTA};
use egomem::retrieval::{answer_question, Ablations, PipelineConfig};
use egomem::{
    build_memory, BackendConfig, BuildOptions, EvalConfig, EvalMode, HttpBackend, MemoryStore, MockBackend, PromptSet,
};

#[derive(Parser)]
#[command(name = "egomem", version, about = "Multi-agent egocentric memory and retrieval")]
struct Cli {
    #[command(flatten)]
    backend: BackendArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct BackendArgs {
    /// JSON backend config for an OpenAI-compatible endpoint. The mock
    /// backend is used when omitted.
    #[arg(long, global = true)]
    backend: Option<PathBuf>,
    /// Seed for the mock backend.
    #[arg(long = "mock-seed", global = true, default_value_t = 0)]
    mock_seed: u64,
    /// Directory of prompt templates overriding the built-in ones.
    #[arg(long, global = true)]
    prompts: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct PipelineArgs {
    #[arg(long, default_value_t = egomem::retrieval::DEFAULT_N)]
    n: usize,
    #[arg(long, default_value_t = egomem::retrieval::DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = egomem::retrieval::DEFAULT_TAU)]
    tau: f64,
    /// Context budget in whitespace tokens.
    #[arg(long, default_value_t = egomem::retrieval::DEFAULT_CONTEXT_BUDGET)]
    budget: usize,
    #[arg(long)]
    no_shared_memory: bool,
    #[arg(long)]
    no_dynamic_retrieval: bool,
    #[arg(long)]
    restrict_agent: Option<String>,
    #[arg(long)]
    max_agents: Option<usize>,
}

impl PipelineArgs {
    fn config(&self, roster: Option<&Roster>) -> Result<PipelineConfig, String> {
        let restrict_agent = match (&self.restrict_agent, roster) {
            (None, _) => None,
            (Some(key), Some(r)) => Some(
                r.resolve(key)
                    .map(|a| a.id.clone())
                    .ok_or_else(|| format!("unknown agent {key:?}"))?,
            ),
            (Some(key), None) => Some(egomem::AgentId::new(key.clone()).map_err(|e| e.to_string())?),
        };
        Ok(PipelineConfig {
            n: self.n,
            k: self.k,
            tau: self.tau,
            context_token_budget: self.budget,
            ablations: Ablations {
                disable_shared_memory: self.no_shared_memory,
                disable_dynamic_retrieval: self.no_dynamic_retrieval,
                restrict_agent,
                max_agents: self.max_agents,
            },
            ..PipelineConfig::default()
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the planted synthetic corpus (roster, captions, QA) to a directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build a memory store from captions.
    BuildMemory {
        #[arg(long)]
        roster: PathBuf,
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = egomem::memory::DEFAULT_INTERVAL_MINUTES)]
        interval: u32,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
    },
    /// Answer one question against a store.
    Ask {
        #[arg(long)]
        question: String,
        #[arg(long)]
        store: PathBuf,
        /// Answer option; give five for a multiple-choice question.
        #[arg(long = "option")]
        options: Vec<String>,
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Print the full trace as JSON.
        #[arg(long)]
        trace: bool,
    },
    /// Score a QA file in one mode.
    Eval {
        #[arg(long)]
        qa: PathBuf,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, default_value = "egomas")]
        mode: String,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Shared-memory x dynamic-retrieval grid and agent-count sweep.
    Ablate {
        #[arg(long)]
        qa: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the zero-shot, single-agent and cross-model filter cascade.
    Filter {
        #[arg(long)]
        qa: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: PathBuf,
        /// Backend configs for the two validators; defaults to the primary.
        #[arg(long = "validator", num_args = 0..=2)]
        validators: Vec<PathBuf>,
        #[arg(long, default_value_t = egomem::qafilter::DEFAULT_ZERO_SHOT_TRIALS)]
        trials: usize,
        #[arg(long, default_value_t = egomem::qafilter::DEFAULT_DISCARD_MIN_CORRECT)]
        discard_min_correct: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
    },
    /// Group near-duplicate items into multi-span candidates.
    GroupMultispan {
        #[arg(long)]
        qa: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Backend {
    Mock(MockBackend),
    Http(Box<HttpBackend>),
}

impl Generator for Backend {
    fn generate(&self, request: &GenerationRequest) -> Result<Generation, BackendError> {
        match self {
            Backend::Mock(b) => b.generate(request),
            Backend::Http(b) => b.generate(request),
        }
    }
}

impl Embedder for Backend {
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        match self {
            Backend::Mock(b) => b.embed(text),
            Backend::Http(b) => b.embed(text),
        }
    }
}

/// Failure classes mapped to distinct exit codes.
enum Failure {
    Config(String),
    Run(String),
}

fn cfg<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Config(e.to_string())
}

fn run<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Run(e.to_string())
}

fn open_backend(path: Option<&Path>, seed: u64) -> Result<Backend, Failure> {
    match path {
        None => Ok(Backend::Mock(MockBackend::new(seed))),
        Some(p) => {
            let config = BackendConfig::load(p).map_err(cfg)?;
            Ok(Backend::Http(Box::new(HttpBackend::new(config).map_err(cfg)?)))
        }
    }
}

fn write_file(path: &Path, body: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| run(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, body).map_err(|e| run(format!("{}: {e}", path.display())))
}

fn load_store(dir: &Path) -> Result<MemoryStore, Failure> {
    MemoryStore::load(dir).map_err(cfg)
}

fn free_question(question: &str, options: &[String]) -> Result<QaItem, Failure> {
    let mut opts: [String; 5] = Default::default();
    match options.len() {
        0 => {}
        5 => opts.clone_from_slice(options),
        n => return Err(Failure::Config(format!("expected 0 or 5 --option values, got {n}"))),
    }
    Ok(QaItem {
        id: "cli".into(),
        category: Category::SI,
        subtype: None,
        question: question.to_string(),
        options: opts,
        answer_index: 0,
        referenced_agents: Vec::new(),
        referenced_intervals: Vec::new(),
        gold_context: None,
        extra: Default::default(),
    })
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let prompts = match &cli.backend.prompts {
        Some(dir) => PromptSet::load_dir(dir).map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))?,
        None => PromptSet::default(),
    };
    let backend = open_backend(cli.backend.backend.as_deref(), cli.backend.mock_seed)?;

    match cli.command {
        Command::Synth { out, seed } => {
            let fx = planted_fixture(seed);
            fx.write(&out).map_err(run)?;
            println!(
                "wrote {} captions and {} questions to {}",
                fx.captions.len(),
                fx.items.len(),
                out.display()
            );
        }
        Command::BuildMemory {
            roster,
            captions,
            out,
            interval,
            parallelism,
        } => {
            let roster = Roster::load(&roster).map_err(cfg)?;
            let records = load_captions(&captions, &roster).map_err(cfg)?;
            let opts = BuildOptions {
                interval_minutes: interval,
                max_inflight: parallelism,
                prompts,
                ..BuildOptions::default()
            };
            let (store, report) = build_memory(&backend, &roster, &records, &opts).map_err(run)?;
            store.save(&out).map_err(run)?;
            println!(
                "{} buckets, {} agent entries, {} events, {} rejected, {} skipped",
                report.buckets,
                report.agent_entries,
                report.events,
                report.rejected.len(),
                report.skipped.len()
            );
        }
        Command::Ask {
            question,
            store,
            options,
            pipeline,
            trace,
        } => {
            let store = load_store(&store)?;
            let config = pipeline.config(Some(store.roster())).map_err(Failure::Config)?;
            config.validate(Some(&store)).map_err(cfg)?;
            let item = free_question(&question, &options)?;
            let t = answer_question(&store, &backend, &prompts, &config, &item).map_err(run)?;
            match (options.is_empty(), t.chosen_index) {
                (false, Some(i)) => println!("{}) {}", egomem::corpus::option_letter(i), item.options[i]),
                _ => println!("{}", t.raw_answer),
            }
            if trace {
                println!("{}", serde_json::to_string_pretty(&t).map_err(run)?);
            }
        }
        Command::Eval {
            qa,
            store,
            mode,
            pipeline,
            seed,
            parallelism,
            out,
        } => {
            let mode: EvalMode = mode.parse().map_err(Failure::Config)?;
            let store = store.as_deref().map(load_store).transpose()?;
            let roster = store.as_ref().map(|s| s.roster());
            let items = load_qa(&qa, roster).map_err(cfg)?;
            let config = EvalConfig {
                qa_path: Some(qa),
                store_path: None,
                pipeline: pipeline.config(roster).map_err(Failure::Config)?,
                mode,
                seed,
                parallelism,
            };
            let report = run_eval(store.as_ref(), &items, &backend, &prompts, &config).map_err(|e| match e {
                egomem::harness::EvalError::Config(m) => Failure::Config(m),
                other => run(other),
            })?;
            report.write(&out).map_err(run)?;
            print!("{}", report.render_table());
        }
        Command::Ablate {
            qa,
            store,
            pipeline,
            parallelism,
            out,
        } => {
            let store = load_store(&store)?;
            let items = load_qa(&qa, Some(store.roster())).map_err(cfg)?;
            let base = EvalConfig {
                qa_path: Some(qa),
                pipeline: pipeline.config(Some(store.roster())).map_err(Failure::Config)?,
                parallelism,
                ..EvalConfig::default()
            };
            let table = compare_ablations(&store, &items, &backend, &prompts, &base);
            write_file(&out, &serde_json::to_string_pretty(&table).map_err(run)?)?;
            print!("{}", table.render());
        }
        Command::Filter {
            qa,
            store,
            out,
            log,
            validators,
            trials,
            discard_min_correct,
            seed,
            parallelism,
        } => {
            if discard_min_correct == 0 || discard_min_correct > trials {
                return Err(Failure::Config("--discard-min-correct must be in 1..=trials".into()));
            }
            let store = load_store(&store)?;
            let items = load_qa(&qa, Some(store.roster())).map_err(cfg)?;
            let mut opened = Vec::new();
            for (i, p) in validators.iter().enumerate() {
                opened.push(open_backend(Some(p), cli.backend.mock_seed + 1 + i as u64)?);
            }
            let v0: &dyn Generator = opened.first().map_or(&backend as &dyn Generator, |b| b);
            let v1: &dyn Generator = opened.get(1).map_or(v0, |b| b);
            let backends = CascadeBackends {
                primary: &backend,
                validators: [v0, v1],
            };
            let config = CascadeConfig {
                zero_shot_trials: trials,
                discard_min_correct,
                seed,
                parallelism,
                ..CascadeConfig::default()
            };
            let outcome = run_cascade(&backends, &items, &store, &prompts, &config);
            let kept: String = outcome
                .kept
                .iter()
                .map(|it| egomem::corpus::qa_to_json_line(it) + "\n")
                .collect();
            write_file(&out, &kept)?;
            let mut lines = String::new();
            for v in &outcome.log {
                lines.push_str(&serde_json::to_string(v).map_err(run)?);
                lines.push('\n');
            }
            for q in &outcome.quarantined {
                lines.push_str(&json!({"quarantined": q}).to_string());
                lines.push('\n');
            }
            write_file(&log, &lines)?;
            println!(
                "kept {} of {} items ({} verdicts, {} quarantined)",
                outcome.kept.len(),
                items.len(),
                outcome.log.len(),
                outcome.quarantined.len()
            );
        }
        Command::GroupMultispan { qa, delta, out } => {
            if !(0.0..=1.0).contains(&delta) {
                return Err(Failure::Config("--delta must be in [0, 1]".into()));
            }
            let items = load_qa(&qa, None).map_err(cfg)?;
            let samples = embed_items(&backend, &items).map_err(run)?;
            let groups = group_multispan(&samples, delta).map_err(run)?;
            let named: Vec<Vec<&str>> = groups
                .iter()
                .map(|g| g.iter().map(|&i| samples[i].qa_id.as_str()).collect())
                .collect();
            let body = json!({"delta": delta, "groups": named});
            write_file(&out, &serde_json::to_string_pretty(&body).map_err(run)?)?;
            println!("{} groups", groups.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
