use std::collections::hash_map::RandomState;
use std::hash::{BuildHasher, Hasher};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use codi_core::config::ConfigFile;
use codi_core::eval::{
    evaluate as run_eval, field_strings, length_stats as compute_lengths, load_evalset, score_predictions,
    EvalFormat, EvalOptions, HistoryMode, LengthError, Metric, MetricReport, PredictionRecord,
};
use codi_core::jsonl::{read_jsonl, write_atomic, AtomicFile, JsonlError};
use codi_core::link::{ContextRecord, SeedPool, SeedRecord};
use codi_core::rng::{derive_seed, seeded};
use codi_core::synth::{manifest_path, synthesize_dataset, DatasetRecord, SynthError, SynthesisJob};
use codi_core::teacher::{ChatCompletionsClient, CompletionModel, ScriptedStub, StubFixture, TeacherConfig};
use codi_core::weights::{annotate, WeightPolicy};
use codi_core::Role;
use serde_json::Value;

use crate::settings::{process_env, resolve_teacher, TeacherFlags};

/// Exit code 1: the inputs were read but fail a domain check.
/// Exit code 2: configuration, I/O or environment trouble.
pub struct Failure {
    pub code: u8,
    pub message: String,
}

type CmdResult = Result<(), Failure>;

fn domain(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

fn env_err(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

fn load_config(path: &Path) -> Result<ConfigFile, Failure> {
    let (config, warnings) = ConfigFile::load(path).map_err(|e| env_err(e.to_string()))?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(config)
}

fn fresh_seed() -> u64 {
    let mut h = RandomState::new().build_hasher();
    h.write_u128(SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos()));
    h.write_u32(std::process::id());
    h.finish()
}

fn seed_or_fresh(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = fresh_seed();
        eprintln!("seed: {s}");
        s
    })
}

fn jsonl_failure(e: JsonlError) -> Failure {
    match e {
        JsonlError::Record { .. } => domain(e.to_string()),
        _ => env_err(e.to_string()),
    }
}

pub fn validate_graph(config: &Path) -> CmdResult {
    let config = load_config(config)?;
    let report = config.graph().validate();
    print!("{report}");
    if !report.is_valid() {
        return Err(domain(format!("{} graph finding(s)", report.findings.len())));
    }
    if !config.links.is_empty() {
        config.blueprint().map_err(|e| domain(e.to_string()))?;
        println!("links valid: {}", config.links.len());
    }
    Ok(())
}

pub fn sample_chains(config: &Path, n: u64, seed: Option<u64>, length: Option<usize>) -> CmdResult {
    let config = load_config(config)?;
    let graph = config.graph().into_valid().map_err(|e| domain(e.to_string()))?;
    config.length.validate().map_err(|e| env_err(e.to_string()))?;
    if length == Some(0) {
        return Err(env_err("--length must be at least 1"));
    }
    let master = seed_or_fresh(seed);
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for i in 0..n {
        // Same per-index draw order as synthesis: length first, then the walk.
        let mut rng = seeded(derive_seed(master, i));
        let len = length.unwrap_or_else(|| config.length.sample(&mut rng));
        let chain = graph.walk(len, &mut rng).map_err(|e| domain(e.to_string()))?;
        writeln!(out, "{}", chain.join(" -> ")).map_err(|e| env_err(e.to_string()))?;
    }
    out.flush().map_err(|e| env_err(e.to_string()))
}

pub struct SynthesizeArgs {
    pub config: PathBuf,
    pub contexts: PathBuf,
    pub seeds: Option<PathBuf>,
    pub n: u64,
    pub out: PathBuf,
    pub stub: Option<PathBuf>,
    pub flags: TeacherFlags,
    pub seed: Option<u64>,
    pub max_attempts: Option<u64>,
}

pub fn synthesize(args: SynthesizeArgs) -> CmdResult {
    let config = load_config(&args.config)?;
    let blueprint = config.blueprint().map_err(|e| env_err(e.to_string()))?;
    let contexts: Vec<ContextRecord> = read_jsonl(&args.contexts).map_err(|e| env_err(e.to_string()))?;
    let seeds: Vec<SeedRecord> = match &args.seeds {
        Some(p) => read_jsonl(p).map_err(|e| env_err(e.to_string()))?,
        None => Vec::new(),
    };
    let seeds = SeedPool::new(seeds).map_err(|e| env_err(e.to_string()))?;

    let stub_mode = args.stub.is_some();
    let mut flags = args.flags.clone();
    if stub_mode {
        // The endpoint is irrelevant for a stub; only the worker cap matters.
        flags.url = None;
    }
    let teacher = resolve_teacher(&config.teacher, &flags, &process_env).map_err(env_err)?;
    let mut workers = teacher.max_in_flight;
    let model: Box<dyn CompletionModel> = match &args.stub {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| env_err(format!("{}: {e}", path.display())))?;
            let fixture: StubFixture = serde_json::from_str(&text)
                .map_err(|e| env_err(format!("{}: {e}", path.display())))?;
            if !fixture.fallback.is_empty() && workers > 1 {
                // The fallback queue is consumed in call order.
                eprintln!("note: stub fixture has a fallback queue; running with one worker");
                workers = 1;
            }
            Box::new(ScriptedStub::from_fixture(fixture))
        }
        None => Box::new(ChatCompletionsClient::new(teacher.clone()).map_err(|e| env_err(e.to_string()))?),
    };

    let mut policy = config.synthesis.clone();
    if args.max_attempts.is_some() {
        policy.max_attempts = args.max_attempts;
    }
    let master_seed = seed_or_fresh(args.seed);
    let job = SynthesisJob {
        blueprint,
        seeds,
        contexts,
        model: model.as_ref(),
        target: args.n,
        master_seed,
        policy,
        workers,
    };
    let manifest = synthesize_dataset(&job, &args.out).map_err(|e| match e {
        SynthError::Fatal(_) | SynthError::InvalidJob(_) | SynthError::Io(_) => env_err(e.to_string()),
    })?;
    eprintln!(
        "produced {}/{} (attempted {}, teacher calls {}) -> {}",
        manifest.produced,
        manifest.requested,
        manifest.attempted,
        manifest.teacher_calls,
        args.out.display()
    );
    eprintln!("manifest: {}", manifest_path(&args.out).display());
    for (reason, count) in &manifest.rejections {
        eprintln!("  rejected {count} x {reason}");
    }
    if manifest.budget_exhausted {
        return Err(domain(format!(
            "budget exhausted: produced {} of {} after {} attempts",
            manifest.produced, manifest.requested, manifest.attempted
        )));
    }
    Ok(())
}

pub fn annotate_weights(input: &Path, policy: Option<&Path>, out: &Path, context_role: &str) -> CmdResult {
    let context_role = Role::new(context_role).map_err(|e| env_err(e.to_string()))?;
    let policy = match policy {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| env_err(format!("{}: {e}", p.display())))?;
            let policy: WeightPolicy =
                serde_json::from_str(&text).map_err(|e| env_err(format!("{}: {e}", p.display())))?;
            policy.validate().map_err(|e| env_err(e.to_string()))?;
            policy
        }
        None => WeightPolicy::default(),
    };
    let records: Vec<DatasetRecord> = read_jsonl(input).map_err(jsonl_failure)?;
    let mut file = AtomicFile::create(out).map_err(|e| env_err(e.to_string()))?;
    for (i, record) in records.iter().enumerate() {
        let fail = |detail: String| domain(format!("record {} ({}): {detail}", i + 1, record.conversation_id));
        record.check(&context_role).map_err(fail)?;
        let example = annotate(&record.conversation, &policy).map_err(|e| fail(e.to_string()))?;
        example.check_partition().map_err(|e| fail(e.to_string()))?;
        file.write_line(&example).map_err(|e| env_err(e.to_string()))?;
    }
    file.commit().map_err(|e| env_err(e.to_string()))?;
    eprintln!("annotated {} record(s) -> {}", records.len(), out.display());
    Ok(())
}

pub struct EvaluateArgs {
    pub gold: PathBuf,
    pub format: EvalFormat,
    pub pred: Option<PathBuf>,
    pub model_url: Option<String>,
    pub model: String,
    pub history: HistoryMode,
    pub metric: Metric,
    pub per_turn: bool,
    pub report: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub json: bool,
    pub concurrency: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: f64,
}

/// Dialog-level success rate below which an evaluation run fails.
const MIN_SCORED_FRACTION: f64 = 0.9;

pub fn evaluate(args: EvaluateArgs) -> CmdResult {
    let set = load_evalset(&args.gold, args.format).map_err(|e| env_err(e.to_string()))?;
    let report: MetricReport = match (&args.pred, &args.model_url) {
        (Some(pred), _) => {
            let preds: Vec<PredictionRecord> = read_jsonl(pred).map_err(|e| env_err(e.to_string()))?;
            score_predictions(&set, &preds, args.metric)
        }
        (None, Some(url)) => {
            let config = TeacherConfig {
                endpoint: url.clone(),
                model: args.model.clone(),
                temperature: args.temperature,
                max_output_tokens: args.max_tokens,
                timeout_secs: args.timeout,
                max_in_flight: args.concurrency.max(1),
                ..Default::default()
            };
            let client = ChatCompletionsClient::new(config).map_err(|e| env_err(e.to_string()))?;
            let opts = EvalOptions { concurrency: args.concurrency.max(1), ..Default::default() };
            run_eval(&client, &set, args.metric, args.history, &opts)
        }
        (None, None) => return Err(env_err("one of --pred or --model-url is required")),
    };

    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(path) = &args.report {
        write_atomic(path, format!("{json}\n").as_bytes()).map_err(|e| env_err(e.to_string()))?;
    }
    if let Some(path) = &args.csv {
        write_atomic(path, report.per_turn_csv().as_bytes()).map_err(|e| env_err(e.to_string()))?;
    }
    if args.json {
        println!("{json}");
    } else {
        print!("{}", report.summary_table());
        if args.per_turn {
            println!();
            print!("{}", report.per_turn_table());
        }
    }

    if report.missing_predictions > 0 {
        eprintln!("warning: {} turn(s) had no prediction and scored 0", report.missing_predictions);
    }
    for f in &report.failed_dialogs {
        eprintln!("warning: dialog {} skipped: {}", f.dialog_id, f.reason);
    }
    if report.failed_dialogs.iter().any(|f| f.reason.starts_with("Unreachable")) {
        return Err(env_err("model endpoint unreachable"));
    }
    if report.scored_fraction() < MIN_SCORED_FRACTION {
        return Err(domain(format!(
            "only {}/{} dialogs scored",
            report.dialogs_scored, report.dialogs_total
        )));
    }
    Ok(())
}

/// Strings at `field` in a JSON document, or in every record of a JSON-lines file.
fn collect_field(text: &str, field: &str) -> Result<Vec<String>, Failure> {
    if let Ok(doc) = serde_json::from_str::<Value>(text) {
        return field_strings(&doc, field).map_err(|e| env_err(e.to_string()));
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let value: Value =
            serde_json::from_str(line).map_err(|e| env_err(format!("line {}: {e}", i + 1)))?;
        out.extend(field_strings(&value, field).map_err(|e| env_err(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn length_stats(input: &Path, field: &str) -> CmdResult {
    let text = std::fs::read_to_string(input).map_err(|e| env_err(format!("{}: {e}", input.display())))?;
    let texts = collect_field(&text, field)?;
    let stats = compute_lengths(&texts).map_err(|e| match e {
        LengthError::EmptyInput => env_err(format!("{}: no values at {field}", input.display())),
        other => env_err(other.to_string()),
    })?;
    println!("{}", serde_json::to_string(&stats).expect("stats serialize"));
    println!("{:<10}{}", "count", stats.count);
    println!("{:<10}{:.2}", "average", stats.average);
    println!("{:<10}{}", "median", stats.median);
    println!("{:<10}{}", "p90", stats.p90);
    Ok(())
}
