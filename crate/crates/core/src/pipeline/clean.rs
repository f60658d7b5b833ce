//! Discontinuity repair: hand-swap correction, wrist-jump rejection, short
//! gap interpolation and splitting at long gaps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mano::{HandPose, Side};
use crate::rotations::slerp;

use super::record::SequenceRecord;

pub const DEFAULT_JUMP_THRESHOLD: f64 = 0.15;
pub const DEFAULT_MAX_GAP: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanOptions {
    /// Largest plausible wrist displacement per frame, meters.
    pub jump_threshold: f64,
    /// Longest run of missing frames that is interpolated.
    pub max_gap: usize,
}

impl Default for CleanOptions {
    fn default() -> Self {
        CleanOptions {
            jump_threshold: DEFAULT_JUMP_THRESHOLD,
            max_gap: DEFAULT_MAX_GAP,
        }
    }
}

impl CleanOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.jump_threshold > 0.0 && self.jump_threshold.is_finite()) {
            return Err(Error::Config(format!(
                "jump threshold {} must be positive",
                self.jump_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    /// Frames at which the left/right assignment was toggled.
    pub swaps: Vec<usize>,
    /// Hand observations dropped for jumping too far.
    pub invalidated: usize,
    /// Hand observations filled by interpolation.
    pub interpolated: usize,
    /// Number of pieces the record was split into.
    pub pieces: usize,
}

impl CleanReport {
    pub fn repairs(&self) -> usize {
        self.swaps.len() + self.invalidated + self.interpolated
    }
}

fn relabel(p: Option<HandPose>, side: Side) -> Option<HandPose> {
    p.map(|mut p| {
        p.side = side;
        p
    })
}

fn swap_frame(f: &mut super::record::Frame) {
    let left = f.left.take();
    let right = f.right.take();
    f.left = relabel(right, Side::Left);
    f.right = relabel(left, Side::Right);
}

fn dist(a: &HandPose, b: &HandPose) -> f64 {
    (a.tau - b.tau).norm()
}

/// Toggles the hand assignment wherever exchanging the hands shortens both
/// wrist jumps at a discontinuity. The toggle persists until the next one.
fn fix_swaps(rec: &mut SequenceRecord, threshold: f64) -> Vec<usize> {
    let mut swaps = Vec::new();
    let mut swapped = false;
    for t in 1..rec.frames.len() {
        if swapped {
            swap_frame(&mut rec.frames[t]);
        }
        let (prev, cur) = (&rec.frames[t - 1], &rec.frames[t]);
        let (Some(pl), Some(pr), Some(cl), Some(cr)) =
            (&prev.left, &prev.right, &cur.left, &cur.right)
        else {
            continue;
        };
        let keep = (dist(cl, pl), dist(cr, pr));
        if keep.0 <= threshold && keep.1 <= threshold {
            continue;
        }
        let cross = (dist(cr, pl), dist(cl, pr));
        if cross.0 < keep.0 && cross.1 < keep.1 {
            swap_frame(&mut rec.frames[t]);
            swapped = !swapped;
            swaps.push(t);
        }
    }
    swaps
}

/// Drops observations whose wrist moved further from the last accepted one
/// than `threshold` per elapsed frame. After more than `max_gap` rejected
/// frames the next observation is accepted as a fresh start.
fn reject_jumps(track: &mut [Option<HandPose>], threshold: f64, max_gap: usize) -> usize {
    let mut dropped = 0;
    let mut last: Option<(usize, crate::rotations::Vec3)> = None;
    for t in 0..track.len() {
        let Some(p) = &track[t] else { continue };
        match last {
            Some((lt, tau)) if t - lt <= max_gap + 1 => {
                if (p.tau - tau).norm() > threshold * (t - lt) as f64 {
                    track[t] = None;
                    dropped += 1;
                } else {
                    last = Some((t, p.tau));
                }
            }
            _ => last = Some((t, p.tau)),
        }
    }
    dropped
}

fn interpolate(a: &HandPose, b: &HandPose, s: f64) -> HandPose {
    let mut p = a.clone();
    p.tau = a.tau + (b.tau - a.tau) * s;
    p.r_rot = slerp(&a.r_rot, &b.r_rot, s);
    for (j, th) in p.theta.iter_mut().enumerate() {
        *th = slerp(&a.theta[j], &b.theta[j], s);
    }
    for (k, v) in p.beta.iter_mut().enumerate() {
        *v = a.beta[k] + (b.beta[k] - a.beta[k]) * s;
    }
    p
}

/// Fills interior gaps of at most `max_gap` frames. Returns the number of
/// filled frames and the interior gaps left open, as frame ranges.
fn fill_gaps(track: &mut [Option<HandPose>], max_gap: usize) -> (usize, Vec<(usize, usize)>) {
    let mut filled = 0;
    let mut open = Vec::new();
    let mut last: Option<usize> = None;
    for t in 0..track.len() {
        if track[t].is_none() {
            continue;
        }
        if let Some(lt) = last {
            let gap = t - lt - 1;
            if gap > 0 && gap <= max_gap {
                let a = track[lt].clone().expect("anchor present");
                let b = track[t].clone().expect("anchor present");
                for g in lt + 1..t {
                    let s = (g - lt) as f64 / (t - lt) as f64;
                    track[g] = Some(interpolate(&a, &b, s));
                }
                filled += gap;
            } else if gap > max_gap {
                open.push((lt + 1, t));
            }
        }
        last = Some(t);
    }
    (filled, open)
}

/// Repairs a record and splits it at gaps too long to interpolate. Pieces
/// keep the original id when there is only one, otherwise `id.k`.
pub fn clean_sequence(
    rec: &SequenceRecord,
    opts: &CleanOptions,
) -> Result<(Vec<SequenceRecord>, CleanReport)> {
    opts.validate()?;
    let mut rec = rec.clone();
    let mut report = CleanReport {
        swaps: fix_swaps(&mut rec, opts.jump_threshold),
        ..CleanReport::default()
    };
    let mut cuts: Vec<(usize, usize)> = Vec::new();
    for side in [Side::Left, Side::Right] {
        let mut track: Vec<Option<HandPose>> =
            rec.frames.iter().map(|f| f.hand(side).cloned()).collect();
        report.invalidated += reject_jumps(&mut track, opts.jump_threshold, opts.max_gap);
        let (filled, open) = fill_gaps(&mut track, opts.max_gap);
        report.interpolated += filled;
        cuts.extend(open);
        for (f, p) in rec.frames.iter_mut().zip(track) {
            *f.hand_mut(side) = p;
        }
    }
    cuts.sort_unstable();
    let mut pieces = Vec::new();
    let mut start = 0;
    for (a, b) in cuts {
        if a > start {
            pieces.push((start, a));
        }
        start = start.max(b);
    }
    if start < rec.frames.len() {
        pieces.push((start, rec.frames.len()));
    }
    report.pieces = pieces.len();
    let many = pieces.len() > 1;
    let out = pieces
        .into_iter()
        .enumerate()
        .map(|(k, (a, b))| SequenceRecord {
            id: if many {
                format!("{}.{k}", rec.id)
            } else {
                rec.id.clone()
            },
            frames: rec.frames[a..b].to_vec(),
            ..rec.clone()
        })
        .collect();
    Ok((out, report))
}

/// Sum of per-frame wrist displacements over frames `range` for one hand,
/// counting only steps where both frames are present.
pub fn wrist_path_length(rec: &SequenceRecord, side: Side, range: std::ops::Range<usize>) -> f64 {
    let frames = &rec.frames[range];
    frames
        .windows(2)
        .filter_map(|w| Some(dist(w[0].hand(side)?, w[1].hand(side)?)))
        .sum()
}
