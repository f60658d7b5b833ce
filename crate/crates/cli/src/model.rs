//! Tokenizer subcommands: train-tokenizer, tokenize, detokenize.

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use hmt_core::alignment::{express_in_camera, CameraIntrinsics};
use hmt_core::codec::{deserialize_blocks, serialize_blocks, Vocabulary};
use hmt_core::mano::{FeatureVariant, HandSkeleton, Side, NUM_BETAS};
use hmt_core::pipeline::{
    read_records, record_motion, record_reference, training_windows, write_records, Annotations,
    Frame, SequenceRecord,
};
use hmt_core::tokenizer::{
    detokenize_motion, load_model, save_model, tokenize_motion, train_tokenizer, PartTokenizer,
    QuantizerConfig, TrainOptions, DEFAULT_LAMBDA_COMMIT, DEFAULT_LAMBDA_WRIST,
};
use serde_json::{json, Value};

use crate::io::{read_token_file, require_file, require_parent, write_token_file, TokenLine};
use crate::CliError;

/// Vocabulary matching a tokenizer: one motion id per code, one block per
/// hand-second.
pub fn vocab_for(tok: &PartTokenizer) -> Vocabulary {
    Vocabulary::with_motion(
        tok.config.motion_vocab_size() as u32,
        tok.config.tokens_per_hand_second(),
    )
}

fn write_vocab(path: &Option<PathBuf>, tok: &PartTokenizer) -> Result<(), CliError> {
    if let Some(p) = path {
        std::fs::write(p, vocab_for(tok).to_json())?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training records (JSON lines).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Model output; a JSON description is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub vocab_out: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub alpha: usize,
    #[arg(long, default_value_t = 2)]
    pub groups: usize,
    #[arg(long, default_value_t = 8)]
    pub layers: usize,
    #[arg(long, default_value_t = 4096)]
    pub k_wrist: usize,
    #[arg(long, default_value_t = 4096)]
    pub k_finger: usize,
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    /// Feature dimensionality: 51, 99, 109, 114 or 162.
    #[arg(long, default_value_t = 162)]
    pub variant: usize,
    /// One tokenizer for the whole hand instead of wrist and finger parts.
    #[arg(long)]
    pub whole_hand: bool,
    /// Width of a tanh hidden layer in encoder and decoder.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = DEFAULT_LAMBDA_COMMIT)]
    pub lambda_commit: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA_WRIST)]
    pub lambda_wrist: f64,
    #[arg(long, env = "HMT_SEED")]
    pub seed: u64,
}

pub fn train(a: &TrainArgs) -> Result<Value, CliError> {
    require_file(&a.input)?;
    require_parent(&a.out)?;
    let variant = FeatureVariant::from_dim(a.variant)
        .ok_or_else(|| CliError::usage(format!("unknown feature variant {}", a.variant)))?;
    let config = QuantizerConfig {
        alpha: a.alpha,
        groups: a.groups,
        layers: a.layers,
        k_wrist: a.k_wrist,
        k_finger: a.k_finger,
        dim: a.dim,
        variant,
        part_level: !a.whole_hand,
        hidden: a.hidden,
        ..QuantizerConfig::default()
    };
    config.validate()?;
    let opts = TrainOptions {
        lambda_commit: a.lambda_commit,
        lambda_wrist: a.lambda_wrist,
        lr: a.lr,
        batch: a.batch,
        epochs: a.epochs,
        seed: a.seed,
        ..TrainOptions::default()
    };
    let records = read_records(&a.input)?;
    let windows = training_windows(&records, variant, &HandSkeleton::default())?;
    log::info!("training on {} windows", windows.len());
    let start = Instant::now();
    let (tok, history) = train_tokenizer(&windows, config, &opts, |epoch, loss| {
        log::info!(
            "epoch {epoch}: recon {:.5} commit {:.5} wrist {:.5} total {:.5}",
            loss.recon,
            loss.commit,
            loss.wrist,
            loss.total
        );
    })?;
    save_model(&a.out, &tok)?;
    write_vocab(&a.vocab_out, &tok)?;
    let losses: Vec<Value> = history
        .iter()
        .map(
            |l| json!({ "recon": l.recon, "commit": l.commit, "wrist": l.wrist, "total": l.total }),
        )
        .collect();
    Ok(json!({
        "windows": windows.len(),
        "epochs": a.epochs,
        "seconds": start.elapsed().as_secs_f64(),
        "tokens_per_hand_second": tok.config.tokens_per_hand_second(),
        "history": losses,
    }))
}

#[derive(Debug, Args)]
pub struct TokenizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Records (JSON lines).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Token file: `id<TAB>hands<TAB>ids` per record.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub vocab_out: Option<PathBuf>,
}

pub fn tokenize(a: &TokenizeArgs) -> Result<Value, CliError> {
    require_file(&a.model)?;
    require_file(&a.input)?;
    require_parent(&a.out)?;
    let tok = load_model(&a.model)?;
    let vocab = vocab_for(&tok);
    let skel = HandSkeleton::default();
    let records = read_records(&a.input)?;
    let mut lines = Vec::new();
    let mut skipped = Vec::new();
    let mut hand_seconds = 0;
    for rec in &records {
        let motion = match record_motion(rec) {
            Ok(m) => m,
            Err(e) => {
                skipped.push(json!({ "id": rec.id, "reason": e.to_string() }));
                continue;
            }
        };
        let tokens = tokenize_motion(&motion, &tok, &skel)?;
        hand_seconds += tokens.hands.iter().map(|h| h.seconds.len()).sum::<usize>();
        lines.push(TokenLine {
            id: rec.id.clone(),
            sides: tokens.hands.iter().map(|h| h.side).collect(),
            ids: serialize_blocks(&tokens, &vocab)?,
        });
    }
    write_token_file(&a.out, &lines)?;
    write_vocab(&a.vocab_out, &tok)?;
    Ok(json!({
        "streams": lines.len(),
        "hand_seconds": hand_seconds,
        "tokens_per_hand_second": tok.config.tokens_per_hand_second(),
        "skipped": skipped,
    }))
}

#[derive(Debug, Args)]
pub struct DetokenizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Token file written by `tokenize`.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Decoded records (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Original records; when given, shapes, intrinsics and the camera
    /// placement are taken from the record with the same id.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

fn first_beta(rec: &SequenceRecord, side: Side) -> [f64; NUM_BETAS] {
    rec.frames
        .iter()
        .find_map(|f| f.hand(side).map(|p| p.beta))
        .unwrap_or([0.0; NUM_BETAS])
}

pub fn detokenize(a: &DetokenizeArgs) -> Result<Value, CliError> {
    require_file(&a.model)?;
    require_file(&a.input)?;
    if let Some(r) = &a.records {
        require_file(r)?;
    }
    require_parent(&a.out)?;
    let tok = load_model(&a.model)?;
    let vocab = vocab_for(&tok);
    let originals = match &a.records {
        Some(p) => read_records(p)?,
        None => Vec::new(),
    };
    let by_id: HashMap<&str, &SequenceRecord> =
        originals.iter().map(|r| (r.id.as_str(), r)).collect();
    let fps = tok.config.fps as f64;
    let mut out = Vec::new();
    for line in read_token_file(&a.input)? {
        let tokens = deserialize_blocks(&line.ids, &vocab, &line.sides)?;
        let original = by_id.get(line.id.as_str()).copied();
        let mut motion = detokenize_motion(&tokens, &tok, |side| {
            original.map_or([0.0; NUM_BETAS], |r| first_beta(r, side))
        })?;
        if let Some(rec) = original {
            let reference = record_reference(rec)?;
            for m in &mut motion {
                m.poses = express_in_camera(&m.poses, &reference)?;
            }
        }
        let frames = motion.iter().map(|m| m.poses.len()).max().unwrap_or(0);
        let t0 = original.and_then(|r| r.frames.first()).map_or(0.0, |f| f.t);
        let hand = |side: Side, i: usize| {
            motion
                .iter()
                .find(|m| m.side == side)
                .and_then(|m| m.poses.get(i).cloned())
        };
        out.push(SequenceRecord {
            id: line.id.clone(),
            source: original.map_or_else(|| "decoded".to_string(), |r| r.source.clone()),
            fps,
            intrinsics: original.map_or_else(
                || CameraIntrinsics::centered(600.0, 640, 480),
                |r| r.intrinsics,
            ),
            frames: (0..frames)
                .map(|i| Frame {
                    t: t0 + i as f64 / fps,
                    left: hand(Side::Left, i),
                    right: hand(Side::Right, i),
                    image: None,
                })
                .collect(),
            annotations: Annotations::default(),
        });
    }
    write_records(&a.out, &out)?;
    Ok(
        json!({ "records": out.len(), "matched_originals": out.iter().filter(|r| by_id.contains_key(r.id.as_str())).count() }),
    )
}
