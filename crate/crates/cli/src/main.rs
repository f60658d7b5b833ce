//! `hmt`: tokenizer training, tokenization, alignment, dataset mechanics and
//! evaluation from the command line.

mod data;
mod eval;
mod model;
mod vision;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hmt_cli::{io, CliError, EXIT_DATA, EXIT_USAGE};
use serde_json::{json, Value};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "hmt", version, about = "Hand-motion tokenization toolkit")]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "HMT_JOBS")]
    jobs: Option<usize>,
    /// Where to write the JSON report; standard output when omitted.
    #[arg(long, global = true, env = "HMT_REPORT")]
    report: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate procedural two-handed records.
    Synth(data::SynthArgs),
    /// Validate raw records and resample them to 15 fps.
    Ingest(data::IngestArgs),
    /// Repair swaps, jumps and short gaps; split at long gaps.
    Clean(data::CleanArgs),
    /// Chunk records and list their one-second windows.
    Window(data::WindowArgs),
    /// Select a per-source balanced sample manifest.
    Balance(data::BalanceArgs),
    /// Turn a sample manifest into instruction samples.
    Templates(data::TemplatesArgs),
    /// Train a part-level GRQ tokenizer on record windows.
    TrainTokenizer(model::TrainArgs),
    /// Convert records to motion-block token streams.
    Tokenize(model::TokenizeArgs),
    /// Convert token streams back to pose records.
    Detokenize(model::DetokenizeArgs),
    /// Remap an image between camera intrinsics.
    Align(vision::AlignArgs),
    /// Apply a depth-scale or in-plane rotation augmentation.
    Augment(vision::AugmentArgs),
    /// Check token streams against the motion-block grammar.
    ValidateStream(eval::ValidateArgs),
    /// Compare predicted and reference motions.
    Evaluate(eval::EvaluateArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Ingest(_) => "ingest",
            Command::Clean(_) => "clean",
            Command::Window(_) => "window",
            Command::Balance(_) => "balance",
            Command::Templates(_) => "templates",
            Command::TrainTokenizer(_) => "train-tokenizer",
            Command::Tokenize(_) => "tokenize",
            Command::Detokenize(_) => "detokenize",
            Command::Align(_) => "align",
            Command::Augment(_) => "augment",
            Command::ValidateStream(_) => "validate-stream",
            Command::Evaluate(_) => "evaluate",
        }
    }

    fn run(&self) -> Result<Value, CliError> {
        match self {
            Command::Synth(a) => data::synth(a),
            Command::Ingest(a) => data::ingest(a),
            Command::Clean(a) => data::clean(a),
            Command::Window(a) => data::window(a),
            Command::Balance(a) => data::balance(a),
            Command::Templates(a) => data::templates(a),
            Command::TrainTokenizer(a) => model::train(a),
            Command::Tokenize(a) => model::tokenize(a),
            Command::Detokenize(a) => model::detokenize(a),
            Command::Align(a) => vision::align(a),
            Command::Augment(a) => vision::augment(a),
            Command::ValidateStream(a) => eval::validate(a),
            Command::Evaluate(a) => eval::evaluate(a),
        }
    }
}

fn emit(report: &Option<PathBuf>, value: &Value) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    match report {
        Some(path) => std::fs::write(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HMT_LOG", "info"))
        .format_timestamp(None)
        .init();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .expect("thread pool configured once");
    }
    let name = cli.command.name();
    let (value, code) = match cli.command.run() {
        Ok(mut body) => {
            let mut report =
                json!({ "report_version": REPORT_VERSION, "command": name, "ok": true });
            if let (Some(r), Some(b)) = (report.as_object_mut(), body.as_object_mut()) {
                r.append(b);
            }
            (report, 0)
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            let report = json!({
                "report_version": REPORT_VERSION,
                "command": name,
                "ok": false,
                "error": { "kind": e.kind, "message": e.message },
            });
            (report, e.code)
        }
    };
    if let Err(e) = emit(&cli.report, &value) {
        eprintln!("error: cannot write report: {e}");
        return ExitCode::from(EXIT_DATA);
    }
    ExitCode::from(code)
}
