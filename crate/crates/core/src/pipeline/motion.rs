//! Views of records as hand motions for training and tokenization.

use crate::alignment::{reexpress_in_frame, FramePose};
use crate::error::{Error, Result};
use crate::mano::{encode_feature, FeatureSequence, FeatureVariant, HandPose, HandSkeleton, Side};
use crate::tokenizer::HandMotion;

use super::record::SequenceRecord;
use super::window::{chunk_and_window, integer_fps, spans};

/// One-second feature windows of every visible hand, each expressed in its
/// own first frame.
pub fn training_windows(
    records: &[SequenceRecord],
    variant: FeatureVariant,
    skel: &HandSkeleton,
) -> Result<Vec<FeatureSequence>> {
    let mut out = Vec::new();
    for rec in records {
        let fps = integer_fps(rec)?;
        let chunks = chunk_and_window(rec)?;
        for span in spans(rec, &chunks, 1)? {
            for &side in &span.hands {
                let poses: Vec<_> = rec.frames[span.start..span.start + fps]
                    .iter()
                    .filter_map(|f| f.hand(side).cloned())
                    .collect();
                let local = reexpress_in_frame(&poses, &FramePose::of_pose(&poses[0]))?;
                out.push(encode_feature(&local, variant, skel, rec.fps)?);
            }
        }
    }
    Ok(out)
}

fn visible_tracks(rec: &SequenceRecord) -> Result<Vec<(Side, Vec<HandPose>)>> {
    let fps = integer_fps(rec)?;
    let frames = rec.frames.len() / fps * fps;
    if frames == 0 {
        return Err(Error::Windowing(format!(
            "record {} is shorter than a second",
            rec.id
        )));
    }
    let tracks: Vec<(Side, Vec<HandPose>)> = [Side::Left, Side::Right]
        .into_iter()
        .filter_map(|side| {
            let poses: Option<Vec<HandPose>> = rec.frames[..frames]
                .iter()
                .map(|f| f.hand(side).cloned())
                .collect();
            poses.map(|p| (side, p))
        })
        .collect();
    if tracks.is_empty() {
        return Err(Error::Windowing(format!(
            "record {} has no fully visible hand",
            rec.id
        )));
    }
    Ok(tracks)
}

/// Frame in which [`record_motion`] expresses a record: the wrist frame of
/// the first pose of its first fully visible hand, left before right.
pub fn record_reference(rec: &SequenceRecord) -> Result<FramePose> {
    Ok(FramePose::of_pose(&visible_tracks(rec)?[0].1[0]))
}

/// The longest whole-second prefix of a record for each hand seen on all
/// of its frames, expressed in [`record_reference`].
pub fn record_motion(rec: &SequenceRecord) -> Result<Vec<HandMotion>> {
    let tracks = visible_tracks(rec)?;
    let reference = FramePose::of_pose(&tracks[0].1[0]);
    tracks
        .into_iter()
        .map(|(side, poses)| {
            Ok(HandMotion {
                side,
                fps: rec.fps,
                poses: reexpress_in_frame(&poses, &reference)?,
            })
        })
        .collect()
}
