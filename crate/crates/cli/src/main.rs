//! `codi`: synthesize tagged multi-turn conversations from a conversational
//! graph, annotate them with role weights, and score conversational QA.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};
use codi_core::eval::{EvalFormat, HistoryMode, Metric};

#[derive(Parser)]
#[command(name = "codi", version, about = "Conversational data synthesis and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config's graph (and links) and print the findings.
    ValidateGraph {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print sampled chains, one per line.
    SampleChains {
        #[arg(long)]
        config: PathBuf,
        /// Number of chains.
        #[arg(long)]
        n: u64,
        /// Master seed; a fresh one is generated and printed when omitted.
        #[arg(long)]
        seed: Option<u64>,
        /// Fixed chain length, overriding the config's length distribution.
        #[arg(long)]
        length: Option<usize>,
    },
    /// Generate a dataset with a teacher endpoint or a scripted stub.
    #[command(group(ArgGroup::new("source").args(["teacher_url", "stub"]).multiple(false)))]
    Synthesize {
        #[arg(long)]
        config: PathBuf,
        /// JSON-lines file of {context_id, text}.
        #[arg(long)]
        contexts: PathBuf,
        /// JSON-lines file of {seed_id, text}.
        #[arg(long)]
        seeds: Option<PathBuf>,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        out: PathBuf,
        /// Chat-completions endpoint (also CODI_TEACHER_URL, then the config file).
        #[arg(long)]
        teacher_url: Option<String>,
        /// Scripted stub fixture used instead of a network teacher.
        #[arg(long)]
        stub: Option<PathBuf>,
        /// Teacher model name (also CODI_TEACHER_MODEL).
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Maximum in-flight teacher requests (also CODI_CONCURRENCY).
        #[arg(long)]
        concurrency: Option<usize>,
        /// Attempt budget; defaults to twice --n.
        #[arg(long)]
        max_attempts: Option<u64>,
    },
    /// Serialize a dataset and attach per-span loss weights.
    AnnotateWeights {
        #[arg(long = "in")]
        input: PathBuf,
        /// JSON weight policy; defaults to AGENT=1, everything else 0.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "CONTEXT")]
        context_role: String,
    },
    /// Score predictions or a live model against CoQA/QuAC gold data.
    #[command(group(ArgGroup::new("predictor").args(["pred", "model_url"]).required(true)))]
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        format: EvalFormat,
        /// JSON-lines predictions {dialog_id, turn_index, prediction}.
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        model_url: Option<String>,
        #[arg(long, default_value = "student")]
        model: String,
        #[arg(long, default_value = "gold")]
        history: HistoryMode,
        #[arg(long, default_value = "f1")]
        metric: Metric,
        /// Also print per-turn means.
        #[arg(long)]
        per_turn: bool,
        /// Write the full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write per-turn means as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Print the report as JSON instead of tables.
        #[arg(long)]
        json: bool,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        #[arg(long, default_value_t = 0.0)]
        temperature: f64,
        #[arg(long, default_value_t = 256)]
        max_tokens: u32,
        #[arg(long, default_value_t = 120.0)]
        timeout: f64,
    },
    /// Word-length statistics of the strings at a field path.
    LengthStats {
        #[arg(long = "in")]
        input: PathBuf,
        /// e.g. data[].answers[].input_text
        #[arg(long)]
        field: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::ValidateGraph { config } => commands::validate_graph(&config),
        Command::SampleChains { config, n, seed, length } => commands::sample_chains(&config, n, seed, length),
        Command::Synthesize {
            config,
            contexts,
            seeds,
            n,
            out,
            teacher_url,
            stub,
            model,
            seed,
            concurrency,
            max_attempts,
        } => commands::synthesize(commands::SynthesizeArgs {
            config,
            contexts,
            seeds,
            n,
            out,
            stub,
            flags: settings::TeacherFlags { url: teacher_url, model, concurrency },
            seed,
            max_attempts,
        }),
        Command::AnnotateWeights { input, policy, out, context_role } => {
            commands::annotate_weights(&input, policy.as_deref(), &out, &context_role)
        }
        Command::Evaluate {
            gold,
            format,
            pred,
            model_url,
            model,
            history,
            metric,
            per_turn,
            report,
            csv,
            json,
            concurrency,
            temperature,
            max_tokens,
            timeout,
        } => commands::evaluate(commands::EvaluateArgs {
            gold,
            format,
            pred,
            model_url,
            model,
            history,
            metric,
            per_turn,
            report,
            csv,
            json,
            concurrency,
            temperature,
            max_tokens,
            timeout,
        }),
        Command::LengthStats { input, field } => commands::length_stats(&input, &field),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
