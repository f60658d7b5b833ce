//! Procedurally generated smooth hand motion for training and tests.

use std::f64::consts::TAU;

use rand::Rng;

use crate::alignment::{reexpress_in_frame, CameraIntrinsics, FramePose};
use crate::error::Result;
use crate::mano::{HandPose, Side, NUM_BETAS};
use crate::pipeline::{Annotations, Frame, SequenceRecord};
use crate::rotations::{AxisAngle, Vec3};

/// Joints of each finger, proximal first (thumb last).
const FINGERS: [[usize; 3]; 5] = [[0, 1, 2], [3, 4, 5], [6, 7, 8], [9, 10, 11], [12, 13, 14]];
/// Share of a finger's curl taken by each of its joints.
const CURL_SHARE: [f64; 3] = [1.0, 0.9, 0.7];

#[derive(Debug, Clone, PartialEq)]
pub struct MotionStyle {
    pub fps: f64,
    /// Largest finger curl, radians.
    pub max_curl: f64,
    /// Largest sideways spread at the knuckles, radians.
    pub max_spread: f64,
    /// Amplitude of wrist rotation wobble, radians.
    pub wrist_swing: f64,
    /// Amplitude of wrist travel, meters.
    pub travel: f64,
    /// Mean distance from the camera, meters.
    pub depth: f64,
    /// Spread of sampled shape coefficients.
    pub beta_scale: f64,
    /// Oscillation frequencies are drawn from this range, Hz.
    pub freq: (f64, f64),
}

impl Default for MotionStyle {
    fn default() -> Self {
        MotionStyle {
            fps: 15.0,
            max_curl: 1.2,
            max_spread: 0.15,
            wrist_swing: 0.5,
            travel: 0.08,
            depth: 0.5,
            beta_scale: 0.8,
            freq: (0.1, 0.8),
        }
    }
}

/// Sum of two sinusoids with random frequency and phase, in `[-1, 1]`.
#[derive(Debug, Clone, Copy)]
struct Wave {
    f: [f64; 2],
    phase: [f64; 2],
    mix: f64,
}

impl Wave {
    fn new<R: Rng>(rng: &mut R, freq: (f64, f64)) -> Self {
        Wave {
            f: [
                rng.random_range(freq.0..freq.1),
                rng.random_range(freq.0..freq.1),
            ],
            phase: [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)],
            mix: rng.random_range(0.2..0.8),
        }
    }

    fn at(&self, t: f64) -> f64 {
        self.mix * (TAU * self.f[0] * t + self.phase[0]).sin()
            + (1.0 - self.mix) * (TAU * self.f[1] * t + self.phase[1]).sin()
    }
}

/// A continuous pose track of `frames` frames in camera coordinates.
pub fn synthetic_sequence<R: Rng>(
    frames: usize,
    side: Side,
    style: &MotionStyle,
    rng: &mut R,
) -> Vec<HandPose> {
    let mut beta = [0.0; NUM_BETAS];
    for b in beta.iter_mut() {
        *b = style.beta_scale * rng.random_range(-1.0..1.0);
    }
    let curl: Vec<(Wave, f64)> = (0..5)
        .map(|_| (Wave::new(rng, style.freq), rng.random_range(0.2..0.8)))
        .collect();
    let spread: Vec<Wave> = (0..5).map(|_| Wave::new(rng, style.freq)).collect();
    let swing: Vec<Wave> = (0..3).map(|_| Wave::new(rng, style.freq)).collect();
    let travel: Vec<Wave> = (0..3).map(|_| Wave::new(rng, style.freq)).collect();
    let base_rot = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let base_pos = Vec3::new(
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
        style.depth,
    );
    let sign = match side {
        Side::Right => 1.0,
        Side::Left => -1.0,
    };
    (0..frames)
        .map(|i| {
            let t = i as f64 / style.fps;
            let mut pose = HandPose::rest(side);
            pose.beta = beta;
            for (f, joints) in FINGERS.iter().enumerate() {
                let (wave, centre) = &curl[f];
                // curl in [0, max_curl], mostly flexing toward the palm
                let c = style.max_curl * (centre + 0.5 * wave.at(t)).clamp(0.0, 1.0);
                for (k, &j) in joints.iter().enumerate() {
                    let mut a = Vec3::new(0.0, 0.0, -sign * c * CURL_SHARE[k]);
                    if k == 0 {
                        a.y = style.max_spread * spread[f].at(t);
                    }
                    pose.theta[j] = AxisAngle(a);
                }
            }
            pose.r_rot = AxisAngle(
                base_rot
                    + style.wrist_swing * Vec3::new(swing[0].at(t), swing[1].at(t), swing[2].at(t)),
            );
            pose.tau = base_pos
                + style.travel * Vec3::new(travel[0].at(t), travel[1].at(t), travel[2].at(t));
            pose
        })
        .collect()
}

/// `count` independent one-second windows, each expressed in the wrist
/// frame of its first pose.
pub fn synthetic_windows<R: Rng>(
    count: usize,
    style: &MotionStyle,
    rng: &mut R,
) -> Result<Vec<Vec<HandPose>>> {
    let frames = style.fps.round() as usize;
    (0..count)
        .map(|_| {
            let side = if rng.random_bool(0.5) {
                Side::Right
            } else {
                Side::Left
            };
            // skip a random lead-in so windows start at varied phases
            let lead = rng.random_range(0..frames * 4);
            let seq = synthetic_sequence(lead + frames, side, style, rng);
            let window = &seq[lead..];
            reexpress_in_frame(window, &FramePose::of_pose(&window[0]))
        })
        .collect()
}

const ACTIONS: [&str; 8] = [
    "the hand opens slowly",
    "the fingers curl into a loose fist",
    "the wrist turns toward the camera",
    "the hand reaches forward",
    "the fingers spread apart",
    "the hand pulls back",
    "the thumb presses against the fingers",
    "the wrist tilts to the side",
];

/// A two-handed record of `seconds` seconds with placeholder per-second
/// annotations.
pub fn synthetic_record<R: Rng>(
    id: &str,
    source: &str,
    seconds: usize,
    style: &MotionStyle,
    rng: &mut R,
) -> SequenceRecord {
    let frames = seconds * style.fps.round() as usize;
    let mut left = synthetic_sequence(frames, Side::Left, style, rng);
    let mut right = synthetic_sequence(frames, Side::Right, style, rng);
    for p in &mut left {
        p.tau.x -= 0.15;
    }
    for p in &mut right {
        p.tau.x += 0.15;
    }
    let per_second = (0..seconds)
        .map(|_| Some(ACTIONS[rng.random_range(0..ACTIONS.len())].to_string()))
        .collect();
    SequenceRecord {
        id: id.to_string(),
        source: source.to_string(),
        fps: style.fps,
        intrinsics: CameraIntrinsics::centered(600.0, 640, 480),
        frames: left
            .into_iter()
            .zip(right)
            .enumerate()
            .map(|(i, (l, r))| Frame {
                t: i as f64 / style.fps,
                left: Some(l),
                right: Some(r),
                image: None,
            })
            .collect(),
        annotations: Annotations {
            text: Some("two hands moving freely".into()),
            per_second,
        },
    }
}
