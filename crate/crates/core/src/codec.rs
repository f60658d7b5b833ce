//! Motion-block token streams: vocabulary layout, serialization, the
//! structural validator, constrained-decoding masks, soft blending, logit
//! masking and the token-level losses.

use std::fmt;
use std::path::Path;

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mano::{encode_feature, mean_rotation, FeatureSequence, HandSkeleton};
use crate::rotations::{matrix_to_rot6d, rot6d_to_matrix, AxisAngle, Rot6D};
use crate::tokenizer::{tokenize_window, HandMotion, HandTokens, MotionTokens, PartTokenizer};

/// Half-open id interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdRange {
    pub start: u32,
    pub end: u32,
}

impl IdRange {
    pub fn contains(&self, id: u32) -> bool {
        id >= self.start && id < self.end
    }

    pub fn len(&self) -> u32 {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn overlaps(&self, other: &IdRange) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specials {
    pub mot_open: u32,
    pub mot_close: u32,
    pub img_open: u32,
    pub img_close: u32,
    pub img_context: u32,
    pub eos: u32,
}

impl Specials {
    fn all(&self) -> [u32; 6] {
        [
            self.mot_open,
            self.mot_close,
            self.img_open,
            self.img_close,
            self.img_context,
            self.eos,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub text: IdRange,
    pub motion: IdRange,
    pub specials: Specials,
    /// Motion ids per block (one hand-second).
    pub block_len: usize,
}

pub const DEFAULT_TEXT_VOCAB: u32 = 32000;

impl Vocabulary {
    /// Text ids first, then the six specials, then `motion_size` motion ids.
    pub fn with_motion(motion_size: u32, block_len: usize) -> Self {
        let s = DEFAULT_TEXT_VOCAB;
        Vocabulary {
            text: IdRange { start: 0, end: s },
            specials: Specials {
                mot_open: s,
                mot_close: s + 1,
                img_open: s + 2,
                img_close: s + 3,
                img_context: s + 4,
                eos: s + 5,
            },
            motion: IdRange {
                start: s + 6,
                end: s + 6 + motion_size,
            },
            block_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("vocabulary: {m}")));
        if self.motion.is_empty() {
            return bad("empty motion range");
        }
        if self.text.start > self.text.end {
            return bad("inverted text range");
        }
        if self.text.overlaps(&self.motion) {
            return bad("text and motion ranges overlap");
        }
        let sp = self.specials.all();
        for (i, &a) in sp.iter().enumerate() {
            if self.text.contains(a) || self.motion.contains(a) {
                return bad("special id inside a range");
            }
            if sp[i + 1..].contains(&a) {
                return bad("duplicate special id");
            }
        }
        if self.block_len == 0 {
            return bad("zero block length");
        }
        if self.size() > u32::MAX as usize {
            return bad("id space too large");
        }
        Ok(())
    }

    /// Number of ids in the vocabulary (one past the largest id).
    pub fn size(&self) -> usize {
        let top = self
            .specials
            .all()
            .iter()
            .map(|&s| s as u64 + 1)
            .chain([self.text.end as u64, self.motion.end as u64])
            .max()
            .unwrap_or(0);
        top as usize
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Vocabulary = serde_json::from_str(text)?;
        v.validate()?;
        Ok(v)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }

    fn special_tag(&self, id: u32) -> Option<&'static str> {
        let s = &self.specials;
        match id {
            _ if id == s.mot_open => Some("<MOT>"),
            _ if id == s.mot_close => Some("</MOT>"),
            _ if id == s.img_open => Some("<IMG>"),
            _ if id == s.img_close => Some("</IMG>"),
            _ if id == s.img_context => Some("<IMG_CONTEXT>"),
            _ if id == s.eos => Some("<EOS>"),
            _ => None,
        }
    }
}

/// Wraps every hand-second in `<MOT> … </MOT>`. Seconds are emitted in time
/// order; within a second, hands follow the order of `tokens.hands`.
pub fn serialize_blocks(tokens: &MotionTokens, vocab: &Vocabulary) -> Result<Vec<u32>> {
    let seconds = tokens
        .hands
        .iter()
        .map(|h| h.seconds.len())
        .max()
        .unwrap_or(0);
    let mut out = Vec::with_capacity(tokens.total_ids() + 2 * seconds * tokens.hands.len());
    for sec in 0..seconds {
        for hand in &tokens.hands {
            let Some(block) = hand.seconds.get(sec) else {
                continue;
            };
            if block.len() != vocab.block_len {
                return Err(Error::MalformedBlock(format!(
                    "{} hand second {sec} has {} ids, block is {}",
                    hand.side.as_str(),
                    block.len(),
                    vocab.block_len
                )));
            }
            out.push(vocab.specials.mot_open);
            for &id in block {
                if id >= vocab.motion.len() {
                    return Err(Error::InvalidToken {
                        position: out.len(),
                        id,
                    });
                }
                out.push(vocab.motion.start + id);
            }
            out.push(vocab.specials.mot_close);
        }
    }
    Ok(out)
}

/// Motion blocks of a valid stream as local ids (offset removed), in order.
pub fn motion_blocks(
    ids: &[u32],
    vocab: &Vocabulary,
) -> std::result::Result<Vec<Vec<u32>>, Rejection> {
    let segments = match parse_stream(ids, vocab) {
        Verdict::Valid(s) => s,
        Verdict::Invalid(r) => return Err(r),
    };
    Ok(segments
        .iter()
        .filter(|s| s.kind == SegmentKind::Motion)
        .map(|s| {
            ids[s.start + 1..s.end - 1]
                .iter()
                .map(|&id| id - vocab.motion.start)
                .collect()
        })
        .collect())
}

/// Inverse of [`serialize_blocks`] for a known hand order.
pub fn deserialize_blocks(
    ids: &[u32],
    vocab: &Vocabulary,
    sides: &[crate::mano::Side],
) -> Result<MotionTokens> {
    let blocks = motion_blocks(ids, vocab).map_err(|r| Error::MalformedBlock(r.to_string()))?;
    if sides.is_empty() || blocks.len() % sides.len() != 0 {
        return Err(Error::MalformedBlock(format!(
            "{} blocks cannot be split across {} hands",
            blocks.len(),
            sides.len()
        )));
    }
    let mut hands: Vec<HandTokens> = sides
        .iter()
        .map(|&side| HandTokens {
            side,
            seconds: Vec::new(),
        })
        .collect();
    for (i, b) in blocks.into_iter().enumerate() {
        hands[i % sides.len()].seconds.push(b);
    }
    Ok(MotionTokens { hands })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Text,
    Motion,
    Image,
    Eos,
}

/// Span `[start, end)` of the stream; motion and image spans include their
/// delimiters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    UnknownId,
    MotionOutsideBlock,
    NonMotionInBlock,
    ShortBlock,
    LongBlock,
    UnterminatedBlock,
    UnmatchedClose,
    UnterminatedImage,
    NestedImage,
    ContextOutsideImage,
    AfterEos,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::UnknownId => "unknown id",
            RejectReason::MotionOutsideBlock => "motion id outside block",
            RejectReason::NonMotionInBlock => "non-motion id inside block",
            RejectReason::ShortBlock => "short block",
            RejectReason::LongBlock => "long block",
            RejectReason::UnterminatedBlock => "unterminated block",
            RejectReason::UnmatchedClose => "unmatched close",
            RejectReason::UnterminatedImage => "unterminated image span",
            RejectReason::NestedImage => "nested image span",
            RejectReason::ContextOutsideImage => "image context outside image span",
            RejectReason::AfterEos => "tokens after end of sequence",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub position: usize,
    pub reason: RejectReason,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at position {}", self.reason, self.position)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Valid(Vec<Segment>),
    Invalid(Rejection),
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, Verdict::Valid(_))
    }
}

/// Structural check of a free-format stream.
pub fn parse_stream(ids: &[u32], vocab: &Vocabulary) -> Verdict {
    let sp = &vocab.specials;
    let reject = |position, reason| Verdict::Invalid(Rejection { position, reason });
    let mut segments: Vec<Segment> = Vec::new();
    let mut i = 0;
    while i < ids.len() {
        let id = ids[i];
        if vocab.text.contains(id) {
            match segments.last_mut() {
                Some(s) if s.kind == SegmentKind::Text && s.end == i => s.end = i + 1,
                _ => segments.push(Segment {
                    kind: SegmentKind::Text,
                    start: i,
                    end: i + 1,
                }),
            }
            i += 1;
        } else if id == sp.mot_open {
            let start = i;
            let mut j = i + 1;
            while j < ids.len() && j - start - 1 < vocab.block_len {
                let x = ids[j];
                if vocab.motion.contains(x) {
                    j += 1;
                } else if x == sp.mot_close {
                    return reject(j, RejectReason::ShortBlock);
                } else {
                    return reject(j, RejectReason::NonMotionInBlock);
                }
            }
            if j >= ids.len() {
                return reject(ids.len(), RejectReason::UnterminatedBlock);
            }
            if ids[j] != sp.mot_close {
                let reason = if vocab.motion.contains(ids[j]) {
                    RejectReason::LongBlock
                } else {
                    RejectReason::UnterminatedBlock
                };
                return reject(j, reason);
            }
            segments.push(Segment {
                kind: SegmentKind::Motion,
                start,
                end: j + 1,
            });
            i = j + 1;
        } else if id == sp.img_open {
            let start = i;
            let mut j = i + 1;
            loop {
                if j >= ids.len() {
                    return reject(ids.len(), RejectReason::UnterminatedImage);
                }
                let x = ids[j];
                if x == sp.img_close {
                    break;
                }
                if x == sp.img_open {
                    return reject(j, RejectReason::NestedImage);
                }
                if x >= vocab.size() as u32 {
                    return reject(j, RejectReason::UnknownId);
                }
                j += 1;
            }
            segments.push(Segment {
                kind: SegmentKind::Image,
                start,
                end: j + 1,
            });
            i = j + 1;
        } else if id == sp.eos {
            if i + 1 != ids.len() {
                return reject(i + 1, RejectReason::AfterEos);
            }
            segments.push(Segment {
                kind: SegmentKind::Eos,
                start: i,
                end: i + 1,
            });
            i += 1;
        } else if id == sp.mot_close || id == sp.img_close {
            return reject(i, RejectReason::UnmatchedClose);
        } else if id == sp.img_context {
            return reject(i, RejectReason::ContextOutsideImage);
        } else if vocab.motion.contains(id) {
            return reject(i, RejectReason::MotionOutsideBlock);
        } else {
            return reject(i, RejectReason::UnknownId);
        }
    }
    Verdict::Valid(segments)
}

/// Whitespace-separated decimal ids.
pub fn format_ids(ids: &[u32]) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

/// Readable form: specials as tags, motion ids as `m_<local id>`, every
/// other id as its decimal value.
pub fn format_tags(ids: &[u32], vocab: &Vocabulary) -> String {
    ids.iter()
        .map(|&id| {
            if let Some(t) = vocab.special_tag(id) {
                t.to_string()
            } else if vocab.motion.contains(id) {
                format!("m_{}", id - vocab.motion.start)
            } else {
                id.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses either text form (they may be mixed).
pub fn parse_text(text: &str, vocab: &Vocabulary) -> Result<Vec<u32>> {
    let sp = &vocab.specials;
    text.split_whitespace()
        .enumerate()
        .map(|(pos, word)| {
            let bad = || Error::Format(format!("token {pos}: cannot read {word:?}"));
            let id = match word {
                "<MOT>" => sp.mot_open,
                "</MOT>" => sp.mot_close,
                "<IMG>" => sp.img_open,
                "</IMG>" => sp.img_close,
                "<IMG_CONTEXT>" => sp.img_context,
                "<EOS>" => sp.eos,
                _ => match word.strip_prefix("m_") {
                    Some(local) => {
                        let k: u32 = local.parse().map_err(|_| bad())?;
                        if k >= vocab.motion.len() {
                            return Err(bad());
                        }
                        vocab.motion.start + k
                    }
                    None => word.parse().map_err(|_| bad())?,
                },
            };
            Ok(id)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Unconstrained sampling; validity is checked afterwards.
    Free,
    /// Motion ids only inside blocks, fixed block length, no early end.
    Block,
    /// Block constraints plus blending with ground truth between blocks.
    Soft,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeState {
    pub mode: DecodeMode,
    pub inside_block: bool,
    pub emitted_in_block: usize,
    pub blocks_done: usize,
    pub target_blocks: Option<usize>,
    pub finished: bool,
}

impl DecodeState {
    pub fn new(mode: DecodeMode, target_blocks: Option<usize>) -> Self {
        DecodeState {
            mode,
            inside_block: false,
            emitted_in_block: 0,
            blocks_done: 0,
            target_blocks,
            finished: false,
        }
    }

    fn may_end(&self) -> bool {
        !self.inside_block && self.target_blocks.is_none_or(|t| self.blocks_done >= t)
    }

    fn may_open(&self) -> bool {
        !self.inside_block && self.target_blocks.is_none_or(|t| self.blocks_done < t)
    }

    /// Records an emitted id; rejects ids the mask would have forbidden.
    pub fn advance(&mut self, id: u32, vocab: &Vocabulary) -> Result<()> {
        let mask = allowed_mask(self, vocab)?;
        if !mask.get(id as usize).copied().unwrap_or(false) {
            return Err(Error::InvalidToken {
                position: self.emitted_in_block,
                id,
            });
        }
        let sp = &vocab.specials;
        if id == sp.mot_open {
            self.inside_block = true;
            self.emitted_in_block = 0;
        } else if id == sp.mot_close {
            self.inside_block = false;
            self.emitted_in_block = 0;
            self.blocks_done += 1;
        } else if id == sp.eos {
            self.finished = true;
        } else if self.inside_block {
            self.emitted_in_block += 1;
        }
        Ok(())
    }
}

/// Ids permitted next under block-constrained decoding.
pub fn allowed_mask(state: &DecodeState, vocab: &Vocabulary) -> Result<Vec<bool>> {
    if state.mode == DecodeMode::Free {
        return Err(Error::Mode("free decoding has no token constraints".into()));
    }
    let mut mask = vec![false; vocab.size()];
    if state.finished {
        return Ok(mask);
    }
    let sp = &vocab.specials;
    if state.inside_block {
        if state.emitted_in_block < vocab.block_len {
            for id in vocab.motion.start..vocab.motion.end {
                mask[id as usize] = true;
            }
        } else {
            mask[sp.mot_close as usize] = true;
        }
    } else {
        for id in vocab.text.start..vocab.text.end {
            mask[id as usize] = true;
        }
        if state.may_open() {
            mask[sp.mot_open as usize] = true;
        }
        if state.may_end() {
            mask[sp.eos as usize] = true;
        }
    }
    Ok(mask)
}

/// Per-column mean of two feature windows; rotation blocks are averaged in
/// the 6D representation and projected back onto rotations.
pub fn blend_features(a: &FeatureSequence, b: &FeatureSequence) -> Result<FeatureSequence> {
    if a.data.dim() != b.data.dim() || a.variant != b.variant {
        return Err(Error::ShapeMismatch(format!(
            "cannot blend {:?} {} with {:?} {}",
            a.data.dim(),
            a.variant,
            b.data.dim(),
            b.variant
        )));
    }
    let mut data = (&a.data + &b.data) * 0.5;
    let layout = a.variant.layout();
    let w = layout.rot_width;
    let blocks: Vec<usize> = std::iter::once(layout.r_rot.start)
        .chain(layout.theta.clone().step_by(w))
        .collect();
    for t in 0..data.nrows() {
        for &s in &blocks {
            if a.variant.uses_6d() {
                let mut r = [0.0; 6];
                for (k, v) in r.iter_mut().enumerate() {
                    *v = data[(t, s + k)];
                }
                let m = rot6d_to_matrix(Rot6D(r)).map_err(|e| Error::Decode {
                    frame: t,
                    block: s,
                    reason: e.to_string(),
                })?;
                for (k, v) in matrix_to_rot6d(m).0.iter().enumerate() {
                    data[(t, s + k)] = *v;
                }
            } else {
                let ra =
                    AxisAngle::from_slice(&a.data.row(t).as_slice().expect("row-major")[s..s + 3]);
                let rb =
                    AxisAngle::from_slice(&b.data.row(t).as_slice().expect("row-major")[s..s + 3]);
                let m = mean_rotation(&ra, &rb)?;
                for k in 0..3 {
                    data[(t, s + k)] = m.0[k];
                }
            }
        }
    }
    Ok(FeatureSequence { data, ..b.clone() })
}

/// Blends predicted and ground-truth motion window by window and
/// re-tokenizes the result.
pub fn soft_blend(
    pred: &[HandMotion],
    gt: &[HandMotion],
    tok: &PartTokenizer,
    skel: &HandSkeleton,
) -> Result<MotionTokens> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} hands",
            pred.len(),
            gt.len()
        )));
    }
    let fps = tok.config.fps;
    let mut hands = Vec::with_capacity(gt.len());
    for (p, g) in pred.iter().zip(gt) {
        if p.side != g.side || p.poses.len() != g.poses.len() {
            return Err(Error::ShapeMismatch(
                "predicted and reference tracks differ".into(),
            ));
        }
        if g.poses.is_empty() || g.poses.len() % fps != 0 {
            return Err(Error::Windowing(format!(
                "{} frames is not a whole number of {fps}-frame windows",
                g.poses.len()
            )));
        }
        let mut seconds = Vec::new();
        for (pw, gw) in p.poses.chunks(fps).zip(g.poses.chunks(fps)) {
            let fa = encode_feature(pw, tok.config.variant, skel, fps as f64)?;
            let fb = encode_feature(gw, tok.config.variant, skel, fps as f64)?;
            seconds.push(tokenize_window(&blend_features(&fa, &fb)?, tok)?);
        }
        hands.push(HandTokens {
            side: g.side,
            seconds,
        });
    }
    Ok(MotionTokens { hands })
}

/// Most negative finite logit, standing in for minus infinity.
pub const MASKED_LOGIT: f64 = f64::MIN;

/// On a motion label, with probability `p`, pushes every non-motion logit to
/// [`MASKED_LOGIT`]. Returns whether the mask fired.
pub fn logit_mask<R: Rng>(
    logits: &mut [f64],
    label_is_motion: bool,
    p: f64,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<bool> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!(
            "mask probability {p} outside [0, 1]"
        )));
    }
    if !label_is_motion || !rng.random_bool(p) {
        return Ok(false);
    }
    for (id, l) in logits.iter_mut().enumerate() {
        if !vocab.motion.contains(id as u32) {
            *l = MASKED_LOGIT;
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossFilterConfig {
    pub q_low: f64,
    pub q_high: f64,
    pub mask_prob: f64,
}

impl Default for LossFilterConfig {
    fn default() -> Self {
        LossFilterConfig {
            q_low: 15.0,
            q_high: 95.0,
            mask_prob: 0.5,
        }
    }
}

impl LossFilterConfig {
    pub fn validate(&self) -> Result<()> {
        let pct = |q: f64| (0.0..=100.0).contains(&q);
        if !(pct(self.q_low) && pct(self.q_high) && self.q_low < self.q_high) {
            return Err(Error::Config(format!(
                "percentile bounds [{}, {}] invalid",
                self.q_low, self.q_high
            )));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::Config(format!(
                "mask probability {} invalid",
                self.mask_prob
            )));
        }
        Ok(())
    }
}

/// Nearest-rank percentile of sorted values: the value at rank
/// `ceil(q/100 * n)`, with rank 0 read as the minimum.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    // multiply first so whole-number percentiles give exact ranks
    let rank = (q * n as f64 / 100.0).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Mean of the per-token losses lying within the configured percentile
/// bounds, inclusive. Falls back to the plain mean if nothing survives.
pub fn filtered_motion_loss(losses: &[f64], cfg: &LossFilterConfig) -> Result<f64> {
    cfg.validate()?;
    if losses.is_empty() {
        return Err(Error::InvalidInput("no losses to filter".into()));
    }
    if losses.iter().any(|l| l.is_nan()) {
        return Err(Error::InvalidInput("NaN loss".into()));
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = nearest_rank(&sorted, cfg.q_low);
    let hi = nearest_rank(&sorted, cfg.q_high);
    let kept: Vec<f64> = losses
        .iter()
        .copied()
        .filter(|&l| l >= lo && l <= hi)
        .collect();
    let pick = if kept.is_empty() { losses } else { &kept };
    Ok(pick.iter().sum::<f64>() / pick.len() as f64)
}

/// Mean negative log-softmax of the label over positions where `mask` is
/// true. `logits` is `positions x vocab`.
pub fn token_cross_entropy(logits: ArrayView2<f64>, labels: &[u32], mask: &[bool]) -> Result<f64> {
    if logits.nrows() != labels.len() || labels.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logit rows, {} labels, {} mask entries",
            logits.nrows(),
            labels.len(),
            mask.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ((row, &label), &m) in logits.rows().into_iter().zip(labels).zip(mask) {
        if !m {
            continue;
        }
        let label = label as usize;
        if label >= row.len() {
            return Err(Error::InvalidToken {
                position: count,
                id: label as u32,
            });
        }
        let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + row.iter().map(|&v| (v - top).exp()).sum::<f64>().ln();
        total += lse - row[label];
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidInput("every position is masked".into()));
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mano::Side;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocabulary {
        Vocabulary::with_motion(8192, 128)
    }

    fn tokens(seconds: usize, hands: usize) -> MotionTokens {
        MotionTokens {
            hands: (0..hands)
                .map(|h| HandTokens {
                    side: if h == 0 { Side::Left } else { Side::Right },
                    seconds: (0..seconds)
                        .map(|s| {
                            (0..128)
                                .map(|i| ((s * 131 + i * 17 + h) % 8192) as u32)
                                .collect()
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn default_layout_is_consistent() {
        let v = vocab();
        v.validate().unwrap();
        assert_eq!(v.size(), 32000 + 6 + 8192);
        let back = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(back, v);
        let mut bad = v.clone();
        bad.specials.eos = 5;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn block_positions() {
        let v = vocab();
        assert!(serialize_blocks(&tokens(0, 1), &v).unwrap().is_empty());
        let one = serialize_blocks(&tokens(1, 1), &v).unwrap();
        assert_eq!(one.len(), 130);
        let two = serialize_blocks(&tokens(2, 1), &v).unwrap();
        for p in [0, 130] {
            assert_eq!(two[p], v.specials.mot_open);
        }
        for p in [129, 259] {
            assert_eq!(two[p], v.specials.mot_close);
        }
        let mut short = tokens(1, 1);
        short.hands[0].seconds[0].pop();
        assert!(matches!(
            serialize_blocks(&short, &v),
            Err(Error::MalformedBlock(_))
        ));
    }

    #[test]
    fn round_trip_through_parser() {
        let v = vocab();
        let t = tokens(3, 2);
        let ids = serialize_blocks(&t, &v).unwrap();
        match parse_stream(&ids, &v) {
            Verdict::Valid(s) => assert_eq!(s.len(), 6),
            other => panic!("{other:?}"),
        }
        let back = deserialize_blocks(&ids, &v, &[Side::Left, Side::Right]).unwrap();
        assert_eq!(back, t);
        for text in [format_ids(&ids), format_tags(&ids, &v)] {
            assert_eq!(parse_text(&text, &v).unwrap(), ids);
        }
        assert!(format_tags(&ids, &v).starts_with("<MOT> m_0 m_17"));
    }

    #[test]
    fn rejections() {
        let v = vocab();
        let sp = v.specials;
        let ids = serialize_blocks(&tokens(1, 1), &v).unwrap();
        let mut text_inside = ids.clone();
        text_inside[1] = 42;
        assert_eq!(
            parse_stream(&text_inside, &v),
            Verdict::Invalid(Rejection {
                position: 1,
                reason: RejectReason::NonMotionInBlock
            })
        );
        let mut short = ids.clone();
        short.remove(5);
        assert_eq!(
            parse_stream(&short, &v),
            Verdict::Invalid(Rejection {
                position: 128,
                reason: RejectReason::ShortBlock
            })
        );
        let mut long = ids.clone();
        long.insert(5, v.motion.start);
        assert_eq!(
            parse_stream(&long, &v),
            Verdict::Invalid(Rejection {
                position: 129,
                reason: RejectReason::LongBlock
            })
        );
        assert!(matches!(
            parse_stream(&ids[..100], &v),
            Verdict::Invalid(Rejection {
                reason: RejectReason::UnterminatedBlock,
                position: 100
            })
        ));
        let stray = [1, 2, sp.mot_close];
        assert!(!parse_stream(&stray, &v).is_valid());
        let after = [1, sp.eos, 2];
        assert_eq!(
            parse_stream(&after, &v),
            Verdict::Invalid(Rejection {
                position: 2,
                reason: RejectReason::AfterEos
            })
        );
        let image = [
            sp.img_open,
            sp.img_context,
            sp.img_context,
            sp.img_close,
            7,
            sp.eos,
        ];
        assert!(parse_stream(&image, &v).is_valid());
        assert!(!parse_stream(&[v.motion.start], &v).is_valid());
        assert!(!parse_stream(&[u32::MAX], &v).is_valid());
    }

    #[test]
    fn block_mode_masks() {
        let v = vocab();
        let sp = v.specials;
        assert!(matches!(
            allowed_mask(&DecodeState::new(DecodeMode::Free, None), &v),
            Err(Error::Mode(_))
        ));
        let mut st = DecodeState::new(DecodeMode::Block, Some(2));
        let m = allowed_mask(&st, &v).unwrap();
        assert!(!m[sp.eos as usize] && m[sp.mot_open as usize] && m[10]);
        st.advance(sp.mot_open, &v).unwrap();
        for _ in 0..128 {
            st.advance(v.motion.start + 3, &v).unwrap();
        }
        let m = allowed_mask(&st, &v).unwrap();
        assert_eq!(m.iter().filter(|&&b| b).count(), 1);
        assert!(m[sp.mot_close as usize]);
        st.advance(sp.mot_close, &v).unwrap();
        st.blocks_done = 2;
        let m = allowed_mask(&st, &v).unwrap();
        assert!(m[sp.eos as usize] && !m[sp.mot_open as usize]);
        assert!(st.advance(v.motion.start, &v).is_err());
    }

    #[test]
    fn filtered_loss_examples() {
        let cfg = LossFilterConfig::default();
        assert_eq!(filtered_motion_loss(&[2.5; 7], &cfg).unwrap(), 2.5);
        let l: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(filtered_motion_loss(&l, &cfg).unwrap(), 55.0);
        let all = LossFilterConfig {
            q_low: 0.0,
            q_high: 100.0,
            ..cfg
        };
        assert_eq!(filtered_motion_loss(&l, &all).unwrap(), 50.5);
        assert!(filtered_motion_loss(&[], &cfg).is_err());
    }

    #[test]
    fn logit_mask_extremes() {
        let v = Vocabulary {
            text: IdRange { start: 0, end: 4 },
            specials: Specials {
                mot_open: 4,
                mot_close: 5,
                img_open: 6,
                img_close: 7,
                img_context: 8,
                eos: 9,
            },
            motion: IdRange { start: 10, end: 14 },
            block_len: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let base: Vec<f64> = (0..14).map(|i| i as f64 * 0.1).collect();
        let mut l = base.clone();
        assert!(!logit_mask(&mut l, true, 0.0, &v, &mut rng).unwrap());
        assert_eq!(l, base);
        assert!(!logit_mask(&mut l, false, 1.0, &v, &mut rng).unwrap());
        assert!(logit_mask(&mut l, true, 1.0, &v, &mut rng).unwrap());
        for (i, (&a, &b)) in l.iter().zip(&base).enumerate() {
            if i >= 10 {
                assert_eq!(a.to_bits(), b.to_bits());
            } else {
                assert_eq!(a, MASKED_LOGIT);
            }
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = Array2::<f64>::zeros((3, 50));
        let ce = token_cross_entropy(uniform.view(), &[1, 2, 3], &[true; 3]).unwrap();
        assert!((ce - 50f64.ln()).abs() < 1e-12);
        let mut sharp = Array2::<f64>::zeros((2, 5));
        sharp[(0, 1)] = 1e3;
        sharp[(1, 4)] = 1e3;
        let ce = token_cross_entropy(sharp.view(), &[1, 4], &[true, true]).unwrap();
        assert!(ce < 1e-12);
        let ce = token_cross_entropy(sharp.view(), &[1, 0], &[true, false]).unwrap();
        assert!(ce < 1e-12);
        assert!(token_cross_entropy(sharp.view(), &[1], &[true]).is_err());
    }
}
