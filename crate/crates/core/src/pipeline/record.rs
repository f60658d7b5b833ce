//! JSON-lines sequence records and ingestion.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::mano::{HandPose, Side};

/// Frame rate every ingested record is brought to.
pub const TARGET_FPS: f64 = 15.0;

/// Free-text labels attached to a record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Annotations {
    /// Description of the whole record.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// One entry per second of record time, indexed by `floor(t)`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_second: Vec<Option<String>>,
}

impl Annotations {
    /// Text covering seconds `first..first + count`, falling back to the
    /// record description when any second is unlabelled.
    pub fn span_text(&self, first: usize, count: usize) -> Option<String> {
        let parts: Option<Vec<&str>> = (first..first + count)
            .map(|s| self.per_second.get(s).and_then(|t| t.as_deref()))
            .collect();
        match parts {
            Some(p) if count > 0 => Some(p.join("; ")),
            _ => self.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Seconds since the start of the original recording.
    pub t: f64,
    pub left: Option<HandPose>,
    pub right: Option<HandPose>,
    /// Path of the matching RGB frame, if any.
    pub image: Option<String>,
}

impl Frame {
    pub fn hand(&self, side: Side) -> Option<&HandPose> {
        match side {
            Side::Left => self.left.as_ref(),
            Side::Right => self.right.as_ref(),
        }
    }

    pub fn hand_mut(&mut self, side: Side) -> &mut Option<HandPose> {
        match side {
            Side::Left => &mut self.left,
            Side::Right => &mut self.right,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub id: String,
    /// Name of the dataset the record came from.
    pub source: String,
    pub fps: f64,
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<Frame>,
    pub annotations: Annotations,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawHand {
    theta: Vec<f64>,
    rrot: Vec<f64>,
    tau: Vec<f64>,
    beta: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawFrame {
    t: Option<f64>,
    #[serde(default)]
    left: Option<RawHand>,
    #[serde(default)]
    right: Option<RawHand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: Option<String>,
    source: Option<String>,
    fps: Option<f64>,
    intrinsics: Option<CameraIntrinsics>,
    frames: Option<Vec<RawFrame>>,
    #[serde(default)]
    annotations: Annotations,
}

fn ingest_err(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Ingest {
        field: field.into(),
        reason: reason.into(),
    }
}

fn raw_hand(p: &HandPose) -> RawHand {
    RawHand {
        theta: p.theta_flat().to_vec(),
        rrot: p.r_rot.to_array().to_vec(),
        tau: vec![p.tau.x, p.tau.y, p.tau.z],
        beta: p.beta.to_vec(),
    }
}

fn parse_hand(raw: &RawHand, side: Side, field: String) -> Result<HandPose> {
    let pose = HandPose::from_flat(&raw.theta, &raw.rrot, &raw.tau, &raw.beta, side)
        .map_err(|e| ingest_err(&field, e.to_string()))?;
    pose.validate()
        .map_err(|e| ingest_err(&field, e.to_string()))?;
    Ok(pose)
}

impl SequenceRecord {
    /// Parses and validates one JSON line without resampling.
    pub fn from_json(line: &str) -> Result<Self> {
        let raw: RawRecord =
            serde_json::from_str(line).map_err(|e| ingest_err("<record>", e.to_string()))?;
        let id = raw.id.ok_or_else(|| ingest_err("id", "missing"))?;
        let source = raw.source.ok_or_else(|| ingest_err("source", "missing"))?;
        if source.is_empty() {
            return Err(ingest_err("source", "empty"));
        }
        let fps = raw.fps.ok_or_else(|| ingest_err("fps", "missing"))?;
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(ingest_err("fps", format!("{fps} is not positive")));
        }
        let intrinsics = raw
            .intrinsics
            .ok_or_else(|| ingest_err("intrinsics", "missing"))?;
        intrinsics
            .validate()
            .map_err(|e| ingest_err("intrinsics", e.to_string()))?;
        let raw_frames = raw.frames.ok_or_else(|| ingest_err("frames", "missing"))?;
        let mut frames = Vec::with_capacity(raw_frames.len());
        for (i, f) in raw_frames.iter().enumerate() {
            let t =
                f.t.ok_or_else(|| ingest_err(format!("frames[{i}].t"), "missing"))?;
            if !t.is_finite() {
                return Err(ingest_err(format!("frames[{i}].t"), "not finite"));
            }
            let hand = |raw: &Option<RawHand>, side: Side| {
                raw.as_ref()
                    .map(|h| parse_hand(h, side, format!("frames[{i}].{}", side.as_str())))
                    .transpose()
            };
            frames.push(Frame {
                t,
                left: hand(&f.left, Side::Left)?,
                right: hand(&f.right, Side::Right)?,
                image: f.image.clone(),
            });
        }
        Ok(SequenceRecord {
            id,
            source,
            fps,
            intrinsics,
            frames,
            annotations: raw.annotations,
        })
    }

    pub fn to_json(&self) -> String {
        let raw = RawRecord {
            id: Some(self.id.clone()),
            source: Some(self.source.clone()),
            fps: Some(self.fps),
            intrinsics: Some(self.intrinsics),
            frames: Some(
                self.frames
                    .iter()
                    .map(|f| RawFrame {
                        t: Some(f.t),
                        left: f.left.as_ref().map(raw_hand),
                        right: f.right.as_ref().map(raw_hand),
                        image: f.image.clone(),
                    })
                    .collect(),
            ),
            annotations: self.annotations.clone(),
        };
        serde_json::to_string(&raw).expect("record serializes")
    }

    pub fn duration_seconds(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    /// Nearest-frame resampling to `fps`: output frame `i` takes input frame
    /// `round(i * self.fps / fps)`.
    pub fn resampled(&self, fps: f64) -> Self {
        if self.fps == fps || self.frames.is_empty() {
            let mut out = self.clone();
            out.fps = fps;
            return out;
        }
        let ratio = self.fps / fps;
        let count = ((self.frames.len() - 1) as f64 / ratio).floor() as usize + 1;
        let frames = (0..count)
            .map(|i| {
                let src = ((i as f64 * ratio).round() as usize).min(self.frames.len() - 1);
                self.frames[src].clone()
            })
            .collect();
        SequenceRecord {
            fps,
            frames,
            ..self.clone()
        }
    }
}

/// Parses one record line and brings it to [`TARGET_FPS`].
pub fn ingest_line(line: &str) -> Result<SequenceRecord> {
    Ok(SequenceRecord::from_json(line)?.resampled(TARGET_FPS))
}

/// Reads every record of a JSON-lines file. Errors name the line number.
pub fn ingest(path: impl AsRef<Path>) -> Result<Vec<SequenceRecord>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(ingest_line(&line).map_err(|e| match e {
            Error::Ingest { field, reason } => Error::Ingest {
                field: format!("line {}: {field}", n + 1),
                reason,
            },
            other => other,
        })?);
    }
    Ok(out)
}

/// Reads records without resampling.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<SequenceRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(SequenceRecord::from_json)
        .collect()
}

pub fn write_records(path: impl AsRef<Path>, records: &[SequenceRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        writeln!(f, "{}", r.to_json())?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotations::AxisAngle;

    fn record(frames: usize, fps: f64) -> SequenceRecord {
        SequenceRecord {
            id: "r0".into(),
            source: "synthetic".into(),
            fps,
            intrinsics: CameraIntrinsics::centered(500.0, 640, 480),
            frames: (0..frames)
                .map(|i| {
                    let mut p = HandPose::rest(Side::Right);
                    p.tau.z = 0.5 + 0.001 * i as f64;
                    p.theta[3] = AxisAngle::new(0.1, 0.2, 0.3 * i as f64 / frames as f64);
                    Frame {
                        t: i as f64 / fps,
                        left: None,
                        right: Some(p),
                        image: None,
                    }
                })
                .collect(),
            annotations: Annotations::default(),
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let r = record(7, 15.0);
        let back = SequenceRecord::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn decimates_to_target_rate() {
        let r = record(30, 30.0);
        let out = ingest_line(&r.to_json()).unwrap();
        assert_eq!(out.fps, TARGET_FPS);
        assert_eq!(out.frames.len(), 15);
        for (i, f) in out.frames.iter().enumerate() {
            assert_eq!(f, &r.frames[2 * i]);
        }
    }

    #[test]
    fn missing_fields_are_named() {
        let mut v: serde_json::Value = serde_json::from_str(&record(2, 15.0).to_json()).unwrap();
        v.as_object_mut().unwrap().remove("intrinsics");
        match ingest_line(&v.to_string()) {
            Err(Error::Ingest { field, .. }) => assert_eq!(field, "intrinsics"),
            other => panic!("{other:?}"),
        }
        let mut v: serde_json::Value = serde_json::from_str(&record(2, 15.0).to_json()).unwrap();
        v["frames"][1]["right"]["theta"] = serde_json::json!([0.0, 1.0]);
        match ingest_line(&v.to_string()) {
            Err(Error::Ingest { field, .. }) => assert_eq!(field, "frames[1].right"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn span_text_falls_back() {
        let a = Annotations {
            text: Some("whole".into()),
            per_second: vec![Some("a".into()), Some("b".into()), None],
        };
        assert_eq!(a.span_text(0, 2).unwrap(), "a; b");
        assert_eq!(a.span_text(1, 2).unwrap(), "whole");
        assert_eq!(Annotations::default().span_text(0, 1), None);
    }
}
