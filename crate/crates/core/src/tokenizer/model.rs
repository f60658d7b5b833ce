//! Part-level tokenizer: windowing, encode/decode and the token layout.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::codebook::Codebook;
use super::config::{FeatureSplit, PartKind, QuantizerConfig};
use super::grq::{grq_dequantize, grq_quantize, GrqCodes};
use super::network::PartNetwork;
use crate::error::{Error, Result};
use crate::mano::{
    decode_feature, encode_feature, FeatureSequence, HandPose, HandSkeleton, Side, NUM_BETAS,
};

/// One part's network, codebooks and owned feature columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerPart {
    pub kind: PartKind,
    pub columns: Vec<usize>,
    pub net: PartNetwork,
    /// One codebook per group, shared by all residual layers of that group.
    pub books: Vec<Codebook>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartTokenizer {
    pub config: QuantizerConfig,
    pub split: FeatureSplit,
    pub parts: Vec<TokenizerPart>,
}

impl PartTokenizer {
    /// Zero weights, identity normalization and empty codebooks.
    pub fn new(config: QuantizerConfig) -> Result<Self> {
        config.validate()?;
        let split = FeatureSplit::for_variant(config.variant);
        let parts = config
            .parts()
            .into_iter()
            .map(|kind| {
                let columns = split.columns(kind);
                let net =
                    PartNetwork::zeros(config.alpha, columns.len(), config.dim, config.hidden);
                TokenizerPart {
                    kind,
                    columns,
                    net,
                    books: (0..config.groups)
                        .map(|_| Codebook::empty(config.group_width()))
                        .collect(),
                }
            })
            .collect();
        Ok(PartTokenizer {
            config,
            split,
            parts,
        })
    }

    pub fn part(&self, kind: PartKind) -> Result<&TokenizerPart> {
        self.parts
            .iter()
            .find(|p| p.kind == kind)
            .ok_or_else(|| Error::Config(format!("tokenizer has no {kind:?} part")))
    }

    /// Narrows every weight and code to `f32` precision and resets codebook
    /// EMA state, so the model equals what a save/load round trip yields.
    pub fn round_to_f32(&mut self) {
        let narrow = |v: f64| v as f32 as f64;
        for p in &mut self.parts {
            p.net.shift.mapv_inplace(narrow);
            p.net.scale.mapv_inplace(narrow);
            for l in p.net.encoder.iter_mut().chain(p.net.decoder.iter_mut()) {
                l.w.mapv_inplace(narrow);
                l.b.mapv_inplace(narrow);
            }
            for b in &mut p.books {
                *b = Codebook::from_codes(b.codes.mapv(narrow));
            }
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.parts
            .iter()
            .all(|p| p.books.iter().all(|b| !b.is_empty()))
    }
}

/// Appends zero rows so the frame count is a multiple of `alpha`.
pub fn pad_window(fs: &FeatureSequence, alpha: usize) -> FeatureSequence {
    let t = fs.frames();
    let padded = t.div_ceil(alpha.max(1)) * alpha.max(1);
    let mut data = Array2::zeros((padded, fs.data.ncols()));
    data.slice_mut(s![..t, ..]).assign(&fs.data);
    FeatureSequence { data, ..fs.clone() }
}

pub(crate) fn select_columns(data: ArrayView2<f64>, cols: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((data.nrows(), cols.len()), |(i, j)| data[(i, cols[j])])
}

/// Latent `ceil(T/alpha) x d` for one part of a padded window.
pub fn encode_window(
    fs: &FeatureSequence,
    part: PartKind,
    tok: &PartTokenizer,
) -> Result<Array2<f64>> {
    let p = tok.part(part)?;
    if fs.data.ncols() != tok.config.variant.dim() {
        return Err(Error::Config(format!(
            "feature width {} but tokenizer expects {}",
            fs.data.ncols(),
            tok.config.variant.dim()
        )));
    }
    let cols = select_columns(fs.data.view(), &p.columns);
    let rows = p.net.stack(cols.view())?;
    Ok(p.net.encode_rows(rows.view()))
}

/// Part columns reconstructed from a latent, truncated to `frames` rows.
pub fn decode_window(
    z_hat: ArrayView2<f64>,
    part: PartKind,
    tok: &PartTokenizer,
    frames: usize,
) -> Result<Array2<f64>> {
    let p = tok.part(part)?;
    if z_hat.ncols() != p.net.dim {
        return Err(Error::ShapeMismatch(format!(
            "latent width {} != {}",
            z_hat.ncols(),
            p.net.dim
        )));
    }
    if frames > z_hat.nrows() * p.net.alpha {
        return Err(Error::ShapeMismatch(format!(
            "{} latent rows cannot cover {frames} frames",
            z_hat.nrows()
        )));
    }
    let y = p.net.unstack(p.net.decode_rows(z_hat));
    Ok(y.slice(s![..frames, ..]).to_owned())
}

/// Reconstructs a full feature window from per-part latents.
pub(crate) fn assemble(
    tok: &PartTokenizer,
    latents: &[Array2<f64>],
    frames: usize,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((frames, tok.config.variant.dim()));
    for (p, z) in tok.parts.iter().zip(latents) {
        let y = decode_window(z.view(), p.kind, tok, frames)?;
        for (j, &c) in p.columns.iter().enumerate() {
            out.column_mut(c).assign(&y.column(j));
        }
    }
    Ok(out)
}

/// Encode, quantize, dequantize and decode one window.
pub fn reconstruct_window(fs: &FeatureSequence, tok: &PartTokenizer) -> Result<FeatureSequence> {
    let padded = pad_window(fs, tok.config.alpha);
    let mut latents = Vec::with_capacity(tok.parts.len());
    for p in &tok.parts {
        let z = encode_window(&padded, p.kind, tok)?;
        let (_, z_hat) = grq_quantize(z.view(), &p.books, tok.config.layers)?;
        latents.push(z_hat);
    }
    Ok(FeatureSequence {
        data: assemble(tok, &latents, fs.frames())?,
        ..fs.clone()
    })
}

/// A hand's pose track at a fixed frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct HandMotion {
    pub side: Side,
    pub fps: f64,
    pub poses: Vec<HandPose>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandTokens {
    pub side: Side,
    /// One block of ids per second.
    pub seconds: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotionTokens {
    pub hands: Vec<HandTokens>,
}

impl MotionTokens {
    pub fn total_ids(&self) -> usize {
        self.hands
            .iter()
            .flat_map(|h| &h.seconds)
            .map(Vec::len)
            .sum()
    }
}

/// Token ids for one window, wrist part first.
pub fn tokenize_window(fs: &FeatureSequence, tok: &PartTokenizer) -> Result<Vec<u32>> {
    let padded = pad_window(fs, tok.config.alpha);
    let mut ids = Vec::with_capacity(tok.config.tokens_per_hand_second());
    for p in &tok.parts {
        let z = encode_window(&padded, p.kind, tok)?;
        let (codes, _) = grq_quantize(z.view(), &p.books, tok.config.layers)?;
        let offset = tok.config.id_offset(p.kind) as u32;
        ids.extend(codes.ids.iter().map(|&k| k + offset));
    }
    Ok(ids)
}

/// Feature window (`fps` frames) decoded from one block of ids.
pub fn detokenize_window(
    ids: &[u32],
    tok: &PartTokenizer,
    side: Side,
    beta: [f64; NUM_BETAS],
) -> Result<FeatureSequence> {
    let cfg = &tok.config;
    let per_part = cfg.tokens_per_part_second();
    if ids.len() != cfg.tokens_per_hand_second() {
        return Err(Error::MalformedBlock(format!(
            "block has {} ids, expected {}",
            ids.len(),
            cfg.tokens_per_hand_second()
        )));
    }
    let steps = cfg.steps_per_second();
    let mut latents = Vec::with_capacity(tok.parts.len());
    for (pi, p) in tok.parts.iter().enumerate() {
        let offset = cfg.id_offset(p.kind) as u32;
        let size = cfg.part_codebook_size(p.kind) as u32;
        let chunk = &ids[pi * per_part..(pi + 1) * per_part];
        let mut local = Vec::with_capacity(per_part);
        for (i, &id) in chunk.iter().enumerate() {
            if id < offset || id >= offset + size {
                return Err(Error::InvalidToken {
                    position: pi * per_part + i,
                    id,
                });
            }
            local.push(id - offset);
        }
        let codes = GrqCodes {
            steps,
            groups: cfg.groups,
            layers: cfg.layers,
            ids: local,
        };
        let z_hat = grq_dequantize(&codes, &p.books).map_err(|e| match e {
            Error::InvalidToken { position, id } => Error::InvalidToken {
                position: pi * per_part + position,
                id: id + offset,
            },
            e => e,
        })?;
        latents.push(z_hat);
    }
    Ok(FeatureSequence {
        data: assemble(tok, &latents, cfg.fps)?,
        variant: cfg.variant,
        fps: cfg.fps as f64,
        beta_ref: beta,
        side,
    })
}

/// Splits each hand's track into one-second windows and tokenizes them.
///
/// Each window is expected to already be expressed in its own reference
/// frame.
pub fn tokenize_motion(
    hands: &[HandMotion],
    tok: &PartTokenizer,
    skel: &HandSkeleton,
) -> Result<MotionTokens> {
    let fps = tok.config.fps;
    let mut out = Vec::with_capacity(hands.len());
    for hand in hands {
        if (hand.fps - fps as f64).abs() > 1e-9 {
            return Err(Error::Windowing(format!(
                "{} hand at {} fps, tokenizer expects {fps}",
                hand.side.as_str(),
                hand.fps
            )));
        }
        if hand.poses.is_empty() || hand.poses.len() % fps != 0 {
            return Err(Error::Windowing(format!(
                "{} frames is not a whole number of {fps}-frame windows",
                hand.poses.len()
            )));
        }
        if let Some(p) = hand.poses.iter().find(|p| p.side != hand.side) {
            return Err(Error::Windowing(format!(
                "{} pose in a {} track",
                p.side.as_str(),
                hand.side.as_str()
            )));
        }
        let mut seconds = Vec::with_capacity(hand.poses.len() / fps);
        for window in hand.poses.chunks(fps) {
            let fs = encode_feature(window, tok.config.variant, skel, fps as f64)?;
            seconds.push(tokenize_window(&fs, tok)?);
        }
        out.push(HandTokens {
            side: hand.side,
            seconds,
        });
    }
    Ok(MotionTokens { hands: out })
}

/// Inverse of [`tokenize_motion`]; `betas` supplies the shape for each side
/// when the feature variant does not carry it.
pub fn detokenize_motion(
    tokens: &MotionTokens,
    tok: &PartTokenizer,
    betas: impl Fn(Side) -> [f64; NUM_BETAS],
) -> Result<Vec<HandMotion>> {
    let mut out = Vec::with_capacity(tokens.hands.len());
    for hand in &tokens.hands {
        let mut poses = Vec::new();
        for block in &hand.seconds {
            let fs = detokenize_window(block, tok, hand.side, betas(hand.side))?;
            poses.extend(decode_feature(&fs)?);
        }
        out.push(HandMotion {
            side: hand.side,
            fps: tok.config.fps as f64,
            poses,
        });
    }
    Ok(out)
}
