//! Evaluation subcommands: validate-stream and evaluate.

use std::path::{Path, PathBuf};

use clap::Args;
use hmt_core::codec::{parse_stream, Verdict, Vocabulary};
use hmt_core::mano::{forward_kinematics, HandSkeleton, Joints21, Side};
use hmt_core::metrics::{frechet_distance, mpjpe, mwte, pa_mpjpe, retrieval_topk, valid_rate};
use hmt_core::pipeline::{read_records, SequenceRecord};
use hmt_core::tokenizer::load_model;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::io::{read_embeddings, read_token_file, require_file};
use crate::model::vocab_for;
use crate::CliError;

/// Rejections listed in full in a validation report.
const MAX_LISTED: usize = 20;

fn load_vocab(vocab: &Option<PathBuf>, model: &Option<PathBuf>) -> Result<Vocabulary, CliError> {
    match (vocab, model) {
        (Some(v), _) => {
            require_file(v)?;
            Ok(Vocabulary::load(v)?)
        }
        (None, Some(m)) => {
            require_file(m)?;
            Ok(vocab_for(&load_model(m)?))
        }
        (None, None) => Err(CliError::usage("give --vocab or --model")),
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Derive the vocabulary from a model instead of `--vocab`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Token file.
    #[arg(long = "in")]
    pub input: PathBuf,
}

pub fn validate(a: &ValidateArgs) -> Result<Value, CliError> {
    require_file(&a.input)?;
    let vocab = load_vocab(&a.vocab, &a.model)?;
    let lines = read_token_file(&a.input)?;
    let streams: Vec<Vec<u32>> = lines.iter().map(|l| l.ids.clone()).collect();
    let rate = valid_rate(&streams, &vocab)?;
    let rejections: Vec<Value> = lines
        .iter()
        .filter_map(|l| match parse_stream(&l.ids, &vocab) {
            Verdict::Valid(_) => None,
            Verdict::Invalid(r) => Some(json!({
                "id": l.id,
                "position": r.position,
                "reason": r.reason.to_string(),
            })),
        })
        .take(MAX_LISTED)
        .collect();
    Ok(json!({ "streams": lines.len(), "valid_rate": rate, "rejections": rejections }))
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction manifest: JSON lines, each a record or `{"path": file}`
    /// naming a records file.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Prediction embeddings, one JSON array per line.
    #[arg(long)]
    pub pred_emb: Option<PathBuf>,
    #[arg(long)]
    pub gt_emb: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Token file whose streams are checked for validity.
    #[arg(long)]
    pub streams: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Deserialize)]
struct PathLine {
    path: PathBuf,
}

fn read_manifest(path: &Path) -> Result<Vec<SequenceRecord>, CliError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in std::fs::read_to_string(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(p) = serde_json::from_str::<PathLine>(line) {
            let file = if p.path.is_absolute() {
                p.path
            } else {
                base.join(p.path)
            };
            require_file(&file)?;
            out.extend(read_records(&file)?);
        } else {
            out.push(
                SequenceRecord::from_json(line).map_err(|e| {
                    CliError::data(format!("{} line {}: {e}", path.display(), n + 1))
                })?,
            );
        }
    }
    Ok(out)
}

/// Joint positions of every frame where a hand appears in both records.
fn paired_joints(
    pred: &[SequenceRecord],
    gt: &[SequenceRecord],
    skel: &HandSkeleton,
) -> Result<(Vec<Joints21>, Vec<Joints21>), CliError> {
    if pred.len() != gt.len() {
        return Err(CliError::data(format!(
            "{} predicted records against {} references",
            pred.len(),
            gt.len()
        )));
    }
    let (mut p_out, mut g_out) = (Vec::new(), Vec::new());
    for (p, g) in pred.iter().zip(gt) {
        if p.frames.len() != g.frames.len() {
            return Err(CliError::data(format!(
                "record {}: {} predicted frames against {}",
                g.id,
                p.frames.len(),
                g.frames.len()
            )));
        }
        for side in [Side::Left, Side::Right] {
            for (fp, fg) in p.frames.iter().zip(&g.frames) {
                if let (Some(a), Some(b)) = (fp.hand(side), fg.hand(side)) {
                    p_out.push(forward_kinematics(a, skel));
                    g_out.push(forward_kinematics(b, skel));
                }
            }
        }
    }
    if p_out.is_empty() {
        return Err(CliError::data(
            "no frame has a hand in both prediction and reference",
        ));
    }
    Ok((p_out, g_out))
}

pub fn evaluate(a: &EvaluateArgs) -> Result<Value, CliError> {
    require_file(&a.pred)?;
    require_file(&a.gt)?;
    for p in [&a.pred_emb, &a.gt_emb, &a.streams].into_iter().flatten() {
        require_file(p)?;
    }
    if a.pred_emb.is_some() != a.gt_emb.is_some() {
        return Err(CliError::usage("--pred-emb and --gt-emb go together"));
    }
    let skel = HandSkeleton::default();
    let pred = read_manifest(&a.pred)?;
    let gt = read_manifest(&a.gt)?;
    let (pj, gj) = paired_joints(&pred, &gt, &skel)?;
    let (fid, r_at_k) = match (&a.pred_emb, &a.gt_emb) {
        (Some(pe), Some(ge)) => {
            let pe = read_embeddings(pe)?;
            let ge = read_embeddings(ge)?;
            if pe.nrows() != ge.nrows() {
                return Err(CliError::data("embedding files differ in row count"));
            }
            let pairs: Vec<usize> = (0..pe.nrows()).collect();
            (
                Some(frechet_distance(pe.view(), ge.view())?),
                Some(retrieval_topk(pe.view(), ge.view(), &pairs, a.k)?),
            )
        }
        _ => (None, None),
    };
    let valid = match &a.streams {
        Some(s) => {
            let vocab = load_vocab(&a.vocab, &a.model)?;
            let streams: Vec<Vec<u32>> = read_token_file(s)?.into_iter().map(|l| l.ids).collect();
            Some(valid_rate(&streams, &vocab)?)
        }
        None => None,
    };
    Ok(json!({
        "frames": pj.len(),
        "mpjpe": mpjpe(&pj, &gj)?,
        "mwte": mwte(&pj, &gj)?,
        "pa_mpjpe": pa_mpjpe(&pj, &gj)?,
        "fid": fid,
        "r_at_k": r_at_k,
        "k": a.k,
        "valid_rate": valid,
        "units": "cm",
    }))
}
