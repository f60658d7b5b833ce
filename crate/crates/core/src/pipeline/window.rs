//! Chunking of records into bounded pieces and overlapping one-second
//! windows within each chunk.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mano::Side;

use super::record::SequenceRecord;

pub const MAX_CHUNK_SECONDS: usize = 10;
/// Windows per second of stride denominator: windows start every half second.
pub const WINDOW_STRIDES_PER_SECOND: usize = 2;
/// Rate at which chunk frames are sampled for annotation.
pub const ANNOTATION_FPS: usize = 2;

/// A contiguous frame range `[start, end)` of a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub record_id: String,
    pub index: usize,
    pub start: usize,
    pub end: usize,
    /// Start frames of the one-second windows inside the chunk.
    pub windows: Vec<usize>,
    /// Frames sampled for annotation.
    pub annotation_frames: Vec<usize>,
    /// Shorter than one second, so it holds no window.
    pub sub_second: bool,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Whole frames per second of a record.
pub fn integer_fps(rec: &SequenceRecord) -> Result<usize> {
    let fps = rec.fps.round();
    if fps < 1.0 || (rec.fps - fps).abs() > 1e-9 {
        return Err(Error::Windowing(format!(
            "record {} at {} fps is not a whole frame rate",
            rec.id, rec.fps
        )));
    }
    Ok(fps as usize)
}

/// Offsets `floor(k * fps / per_second)` below `limit`.
fn ticks(fps: usize, per_second: usize, limit: usize) -> Vec<usize> {
    (0..)
        .map(|k| k * fps / per_second)
        .take_while(|&f| f < limit)
        .collect()
}

/// Splits a record into chunks of at most ten seconds tiling it exactly,
/// each listing its one-second windows at half-second stride.
pub fn chunk_and_window(rec: &SequenceRecord) -> Result<Vec<Chunk>> {
    let fps = integer_fps(rec)?;
    let chunk_len = MAX_CHUNK_SECONDS * fps;
    let total = rec.frames.len();
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < total {
        let end = (start + chunk_len).min(total);
        let len = end - start;
        let windows = if len >= fps {
            ticks(fps, WINDOW_STRIDES_PER_SECOND, len - fps + 1)
                .into_iter()
                .map(|w| start + w)
                .collect()
        } else {
            Vec::new()
        };
        chunks.push(Chunk {
            record_id: rec.id.clone(),
            index: chunks.len(),
            start,
            end,
            windows,
            annotation_frames: ticks(fps, ANNOTATION_FPS, len)
                .into_iter()
                .map(|f| start + f)
                .collect(),
            sub_second: len < fps,
        });
        start = end;
    }
    Ok(chunks)
}

/// A run of whole seconds inside a chunk, the unit that becomes one
/// instruction sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub record_id: String,
    pub chunk: usize,
    /// First frame, an index into the record.
    pub start: usize,
    pub seconds: usize,
    /// Hands observed on every frame of the span, left first.
    pub hands: Vec<Side>,
}

/// Spans of `seconds` seconds starting at each window start of each chunk,
/// keeping those in which at least one hand is seen throughout.
pub fn spans(rec: &SequenceRecord, chunks: &[Chunk], seconds: usize) -> Result<Vec<Span>> {
    let fps = integer_fps(rec)?;
    if seconds == 0 {
        return Err(Error::Windowing("span of zero seconds".into()));
    }
    let mut out = Vec::new();
    for c in chunks {
        for &w in &c.windows {
            let end = w + seconds * fps;
            if end > c.end {
                continue;
            }
            let hands: Vec<Side> = [Side::Left, Side::Right]
                .into_iter()
                .filter(|&s| rec.frames[w..end].iter().all(|f| f.hand(s).is_some()))
                .collect();
            if !hands.is_empty() {
                out.push(Span {
                    record_id: rec.id.clone(),
                    chunk: c.index,
                    start: w,
                    seconds,
                    hands,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::CameraIntrinsics;
    use crate::mano::HandPose;
    use crate::pipeline::record::{Annotations, Frame};

    fn record(frames: usize) -> SequenceRecord {
        SequenceRecord {
            id: "r".into(),
            source: "s".into(),
            fps: 15.0,
            intrinsics: CameraIntrinsics::centered(500.0, 640, 480),
            frames: (0..frames)
                .map(|i| Frame {
                    t: i as f64 / 15.0,
                    left: None,
                    right: Some(HandPose::rest(Side::Right)),
                    image: None,
                })
                .collect(),
            annotations: Annotations::default(),
        }
    }

    #[test]
    fn chunk_lengths() {
        let chunks = chunk_and_window(&record(25 * 15)).unwrap();
        let lens: Vec<usize> = chunks.iter().map(Chunk::len).collect();
        assert_eq!(lens, vec![150, 150, 75]);
        assert_eq!(chunks[0].windows.len(), 19);
        assert_eq!(chunks[2].windows.len(), 9);
        assert_eq!(chunks[0].annotation_frames.len(), 20);
        assert_eq!(&chunks[0].windows[..4], &[0, 7, 15, 22]);
    }

    #[test]
    fn short_record_has_one_flagged_chunk() {
        let chunks = chunk_and_window(&record(6)).unwrap();
        assert_eq!(chunks.len(), 1);
        assert!(chunks[0].sub_second);
        assert!(chunks[0].windows.is_empty());
    }

    #[test]
    fn spans_need_a_visible_hand() {
        let mut rec = record(45);
        rec.frames[20].right = None;
        let chunks = chunk_and_window(&rec).unwrap();
        let s = spans(&rec, &chunks, 1).unwrap();
        assert!(s.iter().all(|s| !(s.start..s.start + 15).contains(&20)));
        assert!(s.iter().all(|s| s.hands == vec![Side::Right]));
        assert_eq!(s.len(), 3);
    }
}
