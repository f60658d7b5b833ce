//! Dataset subcommands: synth, ingest, clean, window, balance, templates.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use hmt_core::mano::HandSkeleton;
use hmt_core::pipeline::{
    balance_corpus, chunk_and_window, clean_sequence, read_manifest, read_records, write_manifest,
    write_records, BalanceConfig, CleanOptions, SampleContext, TemplateOptions, TemplateSet,
    DEFAULT_JUMP_THRESHOLD, DEFAULT_MAX_GAP,
};
use hmt_core::rng::named_rng;
use hmt_core::synthetic::{synthetic_record, MotionStyle};
use hmt_core::tokenizer::load_model;
use serde_json::{json, Value};

use crate::io::{require_file, require_parent};
use crate::model::vocab_for;
use crate::CliError;

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// `name:count` pairs, one per source.
    #[arg(long = "source", required = true)]
    pub sources: Vec<String>,
    #[arg(long, default_value_t = 6)]
    pub seconds: usize,
    #[arg(long, env = "HMT_SEED")]
    pub seed: u64,
}

pub fn synth(a: &SynthArgs) -> Result<Value, CliError> {
    require_parent(&a.out)?;
    if a.seconds == 0 {
        return Err(CliError::usage("--seconds must be positive"));
    }
    let mut plan = Vec::new();
    for s in &a.sources {
        let (name, count) = s
            .split_once(':')
            .and_then(|(n, c)| Some((n, c.parse::<usize>().ok()?)))
            .filter(|(n, _)| !n.is_empty())
            .ok_or_else(|| CliError::usage(format!("--source expects name:count, got {s:?}")))?;
        plan.push((name.to_string(), count));
    }
    let style = MotionStyle::default();
    let mut records = Vec::new();
    for (name, count) in &plan {
        let mut rng = named_rng(a.seed, &format!("synth/{name}"));
        for i in 0..*count {
            records.push(synthetic_record(
                &format!("{name}-{i}"),
                name,
                a.seconds,
                &style,
                &mut rng,
            ));
        }
    }
    write_records(&a.out, &records)?;
    Ok(json!({ "records": records.len(), "seconds_each": a.seconds }))
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn ingest(a: &IngestArgs) -> Result<Value, CliError> {
    require_file(&a.input)?;
    require_parent(&a.out)?;
    let records = hmt_core::pipeline::ingest(&a.input)?;
    write_records(&a.out, &records)?;
    let frames: usize = records.iter().map(|r| r.frames.len()).sum();
    Ok(json!({ "records": records.len(), "frames": frames, "fps": hmt_core::pipeline::TARGET_FPS }))
}

#[derive(Debug, Args)]
pub struct CleanArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Largest wrist displacement per frame, meters.
    #[arg(long, default_value_t = DEFAULT_JUMP_THRESHOLD)]
    pub jump_threshold: f64,
    /// Longest gap filled by interpolation, frames.
    #[arg(long, default_value_t = DEFAULT_MAX_GAP)]
    pub max_gap: usize,
}

pub fn clean(a: &CleanArgs) -> Result<Value, CliError> {
    require_file(&a.input)?;
    require_parent(&a.out)?;
    let opts = CleanOptions {
        jump_threshold: a.jump_threshold,
        max_gap: a.max_gap,
    };
    opts.validate()?;
    let records = read_records(&a.input)?;
    let mut out = Vec::new();
    let mut reports = Vec::new();
    for rec in &records {
        let (pieces, report) = clean_sequence(rec, &opts)?;
        reports.push(json!({ "id": rec.id, "report": report }));
        out.extend(pieces);
    }
    write_records(&a.out, &out)?;
    Ok(json!({ "records_in": records.len(), "records_out": out.len(), "records": reports }))
}

#[derive(Debug, Args)]
pub struct WindowArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Chunk list, one JSON object per line.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn window(a: &WindowArgs) -> Result<Value, CliError> {
    require_file(&a.input)?;
    require_parent(&a.out)?;
    let records = read_records(&a.input)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(&a.out)?);
    let (mut chunks, mut windows, mut sub_second) = (0, 0, 0);
    for rec in &records {
        for c in chunk_and_window(rec)? {
            chunks += 1;
            windows += c.windows.len();
            sub_second += usize::from(c.sub_second);
            writeln!(f, "{}", serde_json::to_string(&c)?)?;
        }
    }
    f.flush()?;
    Ok(json!({ "chunks": chunks, "windows": windows, "sub_second_chunks": sub_second }))
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    #[arg(long)]
    pub records: PathBuf,
    /// Balance configuration JSON; `--target` entries are added to it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `source=count` target, repeatable.
    #[arg(long = "target")]
    pub targets: Vec<String>,
    #[arg(long, env = "HMT_SEED")]
    pub seed: u64,
    /// Sample manifest output.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn balance(a: &BalanceArgs) -> Result<Value, CliError> {
    require_file(&a.records)?;
    if let Some(c) = &a.config {
        require_file(c)?;
    }
    require_parent(&a.out)?;
    let mut cfg = match &a.config {
        Some(path) => BalanceConfig::load(path)?,
        None => BalanceConfig::default(),
    };
    for t in &a.targets {
        let (name, count) = t
            .split_once('=')
            .and_then(|(n, c)| Some((n.to_string(), c.parse::<usize>().ok()?)))
            .ok_or_else(|| CliError::usage(format!("--target expects source=count, got {t:?}")))?;
        cfg.targets.insert(name, count);
    }
    if cfg.targets.is_empty() {
        return Err(CliError::usage("no per-source targets configured"));
    }
    let records = read_records(&a.records)?;
    let (specs, report) = balance_corpus(&records, &cfg, a.seed)?;
    write_manifest(&a.out, &specs)?;
    let tasks: BTreeMap<&str, usize> = report.tasks.iter().map(|(t, n)| (t.as_str(), *n)).collect();
    Ok(json!({ "samples": specs.len(), "sources": report.sources, "tasks": tasks }))
}

#[derive(Debug, Args)]
pub struct TemplatesArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Template set JSON; the built-in set when omitted.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub context_seconds: usize,
    #[arg(long, env = "HMT_SEED")]
    pub seed: u64,
    /// Instruction samples output, one JSON object per line.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn templates(a: &TemplatesArgs) -> Result<Value, CliError> {
    for p in [&a.records, &a.manifest, &a.model] {
        require_file(p)?;
    }
    if let Some(t) = &a.templates {
        require_file(t)?;
    }
    require_parent(&a.out)?;
    let templates = match &a.templates {
        Some(p) => TemplateSet::load(p)?,
        None => TemplateSet::default(),
    };
    let records = read_records(&a.records)?;
    let specs = read_manifest(&a.manifest)?;
    let tok = load_model(&a.model)?;
    let vocab = vocab_for(&tok);
    let skel = HandSkeleton::default();
    let ctx = SampleContext::new(&records, &tok, &skel, &vocab, &templates);
    let opts = TemplateOptions {
        context_seconds: a.context_seconds,
        seed: a.seed,
    };
    let (samples, report) = ctx.build_samples(&specs, &opts)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(&a.out)?);
    for s in &samples {
        writeln!(f, "{}", serde_json::to_string(s)?)?;
    }
    f.flush()?;
    Ok(json!({ "samples": samples.len(), "templates": report }))
}
