//! Camera-space alignment: weak-perspective remapping between intrinsics,
//! field-of-view normalization, depth-scale and in-plane rotation
//! augmentation, and re-expression of motion in a reference frame.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mano::{global_rotation, set_global_rotation, HandPose};
use crate::rotations::{Mat3, RotMatrix, Vec3, ROTATION_TOLERANCE};

pub const DEFAULT_LAMBDA_RANGE: (f64, f64) = (0.7, 1.4);
/// Reference frames are drawn from this many seconds before a window.
pub const DEFAULT_REFERENCE_HORIZON: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    /// Square pixels and a principal point at the image centre.
    pub fn centered(f: f64, width: u32, height: u32) -> Self {
        CameraIntrinsics {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx.is_finite()
            && self.cy.is_finite()
            && self.width > 0
            && self.height > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let k: CameraIntrinsics = serde_json::from_str(text)?;
        k.validate()?;
        Ok(k)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Horizontal field of view in radians.
    pub fn hfov(&self) -> f64 {
        2.0 * (self.width as f64 / (2.0 * self.fx)).atan()
    }
}

/// Per-axis pixel map `u' = s_x u + dx`, `v' = s_y v + dy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub sx: f64,
    pub sy: f64,
    pub dx: f64,
    pub dy: f64,
}

impl AffineMap {
    pub const IDENTITY: AffineMap = AffineMap {
        sx: 1.0,
        sy: 1.0,
        dx: 0.0,
        dy: 0.0,
    };

    pub fn apply(&self, u: f64, v: f64) -> (f64, f64) {
        (self.sx * u + self.dx, self.sy * v + self.dy)
    }

    pub fn invert(&self, u: f64, v: f64) -> (f64, f64) {
        ((u - self.dx) / self.sx, (v - self.dy) / self.sy)
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &AffineMap) -> AffineMap {
        AffineMap {
            sx: next.sx * self.sx,
            sy: next.sy * self.sy,
            dx: next.sx * self.dx + next.dx,
            dy: next.sy * self.dy + next.dy,
        }
    }
}

/// Map taking pixels of `src` to pixels of `dst` so that content at equal
/// depth has equal pixel scale.
pub fn weak_perspective_map(src: &CameraIntrinsics, dst: &CameraIntrinsics) -> AffineMap {
    let sx = dst.fx / src.fx;
    let sy = dst.fy / src.fy;
    AffineMap {
        sx,
        sy,
        dx: dst.cx - sx * src.cx,
        dy: dst.cy - sy * src.cy,
    }
}

/// Intrinsics with a 90° horizontal field of view at the same resolution,
/// principal point centred and the pixel aspect kept.
pub fn normalize_fov(src: &CameraIntrinsics) -> CameraIntrinsics {
    let fx = src.width as f64 / 2.0;
    CameraIntrinsics {
        fx,
        fy: fx * src.fy / src.fx,
        cx: src.width as f64 / 2.0,
        cy: src.height as f64 / 2.0,
        width: src.width,
        height: src.height,
    }
}

pub fn project_point(k: &CameraIntrinsics, p: &Vec3) -> Result<(f64, f64)> {
    if p.z <= 0.0 || !p.z.is_finite() {
        return Err(Error::BehindCamera(p.z));
    }
    Ok((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// 8-bit image, row-major `height x width x channels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub pixels: Vec<u8>,
    pub source: String,
}

impl Image {
    pub fn black(width: u32, height: u32, channels: u8) -> Self {
        Image {
            width,
            height,
            channels,
            pixels: vec![0; width as usize * height as usize * channels as usize],
            source: String::new(),
        }
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let o = self.offset(x, y);
        &self.pixels[o..o + self.channels as usize]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, value: &[u8]) {
        let o = self.offset(x, y);
        let c = self.channels as usize;
        self.pixels[o..o + c].copy_from_slice(&value[..c]);
    }

    /// Reads a PNG; grayscale stays single-channel, everything else is
    /// converted to RGB.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (width, height, channels, pixels) = match image::open(path)? {
            image::DynamicImage::ImageLuma8(b) => (b.width(), b.height(), 1, b.into_raw()),
            other => {
                let b = other.to_rgb8();
                (b.width(), b.height(), 3, b.into_raw())
            }
        };
        Ok(Image {
            width,
            height,
            channels,
            pixels,
            source: path.display().to_string(),
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            4 => image::ExtendedColorType::Rgba8,
            c => return Err(Error::InvalidInput(format!("{c}-channel image"))),
        };
        image::save_buffer(path, &self.pixels, self.width, self.height, color)?;
        Ok(())
    }

    /// Bilinear sample at a real pixel coordinate; samples outside the image
    /// read as black.
    fn sample(&self, u: f64, v: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let x0 = u.floor();
        let y0 = v.floor();
        let fx = u - x0;
        let fy = v - y0;
        for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                let w = wx * wy;
                if w == 0.0 {
                    continue;
                }
                let (x, y) = (x0 + dx, y0 + dy);
                if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
                    continue;
                }
                let p = self.pixel(x as u32, y as u32);
                for (o, &c) in out.iter_mut().zip(p) {
                    *o += w * c as f64;
                }
            }
        }
    }
}

/// Resamples `img` into a `width x height` canvas where output pixel `p`
/// reads source location `inverse(p)`.
pub fn remap_with(
    img: &Image,
    width: u32,
    height: u32,
    inverse: impl Fn(f64, f64) -> (f64, f64),
) -> Image {
    let mut out = Image::black(width, height, img.channels);
    out.source = img.source.clone();
    let mut buf = vec![0.0; img.channels as usize];
    let mut px = vec![0u8; img.channels as usize];
    for y in 0..height {
        for x in 0..width {
            let (u, v) = inverse(x as f64, y as f64);
            if !(u.is_finite() && v.is_finite()) {
                continue;
            }
            img.sample(u, v, &mut buf);
            for (p, b) in px.iter_mut().zip(&buf) {
                *p = b.round().clamp(0.0, 255.0) as u8;
            }
            out.set_pixel(x, y, &px);
        }
    }
    out
}

/// Applies an affine pixel map, producing the target resolution with black
/// fill outside the source.
pub fn remap_image(img: &Image, map: &AffineMap, target: &CameraIntrinsics) -> Image {
    remap_with(img, target.width, target.height, |u, v| map.invert(u, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentKind {
    DepthScale { lambda_s: f64 },
    InplaneRotation { phi: f64 },
}

impl AugmentKind {
    /// Applies the pose half of the augmentation.
    pub fn apply_to_poses(
        &self,
        poses: &[HandPose],
        lambda_range: (f64, f64),
    ) -> Result<Vec<HandPose>> {
        match *self {
            AugmentKind::DepthScale { lambda_s } => {
                depth_scale_poses(poses, lambda_s, lambda_range)
            }
            AugmentKind::InplaneRotation { phi } => inplane_rotate_poses(poses, phi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecord {
    #[serde(flatten)]
    pub kind: AugmentKind,
    pub source: String,
}

/// Appends records to a JSON-lines manifest.
pub fn append_records(path: impl AsRef<Path>, records: &[AugmentRecord]) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

fn check_in_front(poses: &[HandPose]) -> Result<()> {
    for p in poses {
        if p.tau.z <= 0.0 || !p.tau.z.is_finite() {
            return Err(Error::BehindCamera(p.tau.z));
        }
    }
    Ok(())
}

/// Pose half of [`depth_scale_augment`]: scales every wrist depth by
/// `lambda_s`.
pub fn depth_scale_poses(
    poses: &[HandPose],
    lambda_s: f64,
    range: (f64, f64),
) -> Result<Vec<HandPose>> {
    if !(lambda_s >= range.0 && lambda_s <= range.1) {
        return Err(Error::AugmentRange(format!(
            "depth scale {lambda_s} outside [{}, {}]",
            range.0, range.1
        )));
    }
    check_in_front(poses)?;
    Ok(poses
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.tau.z *= lambda_s;
            q
        })
        .collect())
}

/// Pushes the hand `lambda_s` times deeper along the optical axis and
/// shrinks the image by `1 / lambda_s` about the principal point.
pub fn depth_scale_augment(
    poses: &[HandPose],
    img: &Image,
    k: &CameraIntrinsics,
    lambda_s: f64,
    range: (f64, f64),
) -> Result<(Vec<HandPose>, Image, AugmentRecord)> {
    let out = depth_scale_poses(poses, lambda_s, range)?;
    let s = 1.0 / lambda_s;
    let map = AffineMap {
        sx: s,
        sy: s,
        dx: k.cx - s * k.cx,
        dy: k.cy - s * k.cy,
    };
    let image = if lambda_s == 1.0 {
        img.clone()
    } else {
        remap_with(img, img.width, img.height, |u, v| map.invert(u, v))
    };
    let record = AugmentRecord {
        kind: AugmentKind::DepthScale { lambda_s },
        source: img.source.clone(),
    };
    Ok((out, image, record))
}

/// Pose half of [`inplane_rotate_augment`]: rotates wrist position and
/// orientation about the optical axis by `phi`.
pub fn inplane_rotate_poses(poses: &[HandPose], phi: f64) -> Result<Vec<HandPose>> {
    use std::f64::consts::PI;
    if !(phi > -PI && phi <= PI) {
        return Err(Error::AugmentRange(format!(
            "rotation {phi} outside (-pi, pi]"
        )));
    }
    let rz = RotMatrix::about_z(phi).0;
    Ok(poses
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.tau = rz * p.tau;
            set_global_rotation(&mut q, &(rz * global_rotation(p)));
            q
        })
        .collect())
}

/// Rotates the hand about the camera's optical axis by `phi` and the image
/// about the principal point to match.
pub fn inplane_rotate_augment(
    poses: &[HandPose],
    img: &Image,
    k: &CameraIntrinsics,
    phi: f64,
) -> Result<(Vec<HandPose>, Image, AugmentRecord)> {
    let out = inplane_rotate_poses(poses, phi)?;
    let image = if phi == 0.0 {
        img.clone()
    } else {
        let (c, s) = (phi.cos(), phi.sin());
        remap_with(img, img.width, img.height, |u, v| {
            let (du, dv) = (u - k.cx, v - k.cy);
            (c * du + s * dv + k.cx, -s * du + c * dv + k.cy)
        })
    };
    let record = AugmentRecord {
        kind: AugmentKind::InplaneRotation { phi },
        source: img.source.clone(),
    };
    Ok((out, image, record))
}

/// Rigid transform mapping reference-frame coordinates into the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePose {
    pub r: RotMatrix,
    pub t: Vec3,
}

impl FramePose {
    pub fn identity() -> Self {
        FramePose {
            r: RotMatrix::identity(),
            t: Vec3::zeros(),
        }
    }

    /// The wrist frame of a pose.
    pub fn of_pose(p: &HandPose) -> Self {
        FramePose {
            r: RotMatrix(global_rotation(p)),
            t: p.tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.r.validate(ROTATION_TOLERANCE)?;
        if !self.t.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite frame translation".into()));
        }
        Ok(())
    }

    pub fn inverse(&self) -> Self {
        let rt = self.r.transpose();
        FramePose {
            r: rt,
            t: -(rt.0 * self.t),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &FramePose) -> Self {
        FramePose {
            r: RotMatrix(self.r.0 * other.r.0),
            t: self.r.0 * other.t + self.t,
        }
    }
}

fn transform(poses: &[HandPose], r: &Mat3, t: &Vec3) -> Vec<HandPose> {
    poses
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.tau = r * p.tau + t;
            set_global_rotation(&mut q, &(r * global_rotation(p)));
            q
        })
        .collect()
}

/// Expresses camera-frame poses in the frame `reference`:
/// `tau' = R^T (tau - t)`, `R' = R^T R_global`.
pub fn reexpress_in_frame(poses: &[HandPose], reference: &FramePose) -> Result<Vec<HandPose>> {
    reference.validate()?;
    let inv = reference.inverse();
    Ok(transform(poses, &inv.r.0, &inv.t))
}

/// Inverse of [`reexpress_in_frame`].
pub fn express_in_camera(poses: &[HandPose], reference: &FramePose) -> Result<Vec<HandPose>> {
    reference.validate()?;
    Ok(transform(poses, &reference.r.0, &reference.t))
}

/// Frame index of a reference pose drawn uniformly from the `horizon`
/// seconds ending at `window_start`, clamped to the start of the sequence.
pub fn sample_reference_frame<R: Rng>(
    window_start: usize,
    horizon: f64,
    fps: f64,
    len: usize,
    rng: &mut R,
) -> Result<usize> {
    if len == 0 {
        return Err(Error::Windowing("empty sequence".into()));
    }
    if window_start >= len {
        return Err(Error::Windowing(format!(
            "window start {window_start} beyond {len} frames"
        )));
    }
    if !(horizon >= 0.0 && fps > 0.0) {
        return Err(Error::Windowing(format!(
            "bad horizon {horizon} at {fps} fps"
        )));
    }
    let count = ((horizon * fps).round() as usize).max(1);
    let back = rng.random_range(0..count);
    Ok(window_start.saturating_sub(back))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mano::Side;
    use crate::rotations::AxisAngle;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn map_arithmetic() {
        let a = CameraIntrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        };
        let b = CameraIntrinsics {
            fx: 1000.0,
            fy: 1000.0,
            cx: 512.0,
            cy: 512.0,
            width: 1024,
            height: 1024,
        };
        assert_eq!(weak_perspective_map(&a, &a), AffineMap::IDENTITY);
        let m = weak_perspective_map(&a, &b);
        assert_eq!((m.sx, m.sy, m.dx, m.dy), (2.0, 2.0, -128.0, 32.0));
    }

    #[test]
    fn fov_normalization() {
        let k = CameraIntrinsics::centered(320.0, 640, 480);
        assert_eq!(normalize_fov(&k), k);
        let narrow = CameraIntrinsics::centered(640.0, 640, 480);
        assert!((narrow.hfov() - 2.0 * 0.5f64.atan()).abs() < 1e-15);
        let n = normalize_fov(&narrow);
        assert_eq!((n.fx, n.cx), (320.0, 320.0));
        assert!((n.hfov() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!(weak_perspective_map(&narrow, &n).sx < 1.0);
    }

    #[test]
    fn projection() {
        let k = CameraIntrinsics::centered(500.0, 640, 480);
        assert_eq!(
            project_point(&k, &Vec3::new(0.0, 0.0, 1.0)).unwrap(),
            (320.0, 240.0)
        );
        assert_eq!(
            project_point(&k, &Vec3::new(0.1, 0.0, 1.0)).unwrap().0,
            370.0
        );
        let far = project_point(&k, &Vec3::new(0.1, 0.0, 2.0)).unwrap();
        assert_eq!(far.0 - 320.0, 25.0);
        assert!(matches!(
            project_point(&k, &Vec3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera(_))
        ));
    }

    fn test_image(w: u32, h: u32) -> Image {
        let mut img = Image::black(w, h, 3);
        for y in 0..h {
            for x in 0..w {
                img.set_pixel(x, y, &[(x * 7 % 256) as u8, (y * 13 % 256) as u8, 200]);
            }
        }
        img
    }

    #[test]
    fn identity_remap_is_lossless() {
        let img = test_image(31, 17);
        let k = CameraIntrinsics::centered(30.0, 31, 17);
        assert_eq!(remap_image(&img, &AffineMap::IDENTITY, &k), img);
    }

    #[test]
    fn upscaled_point_lands_at_mapped_centre() {
        let mut img = Image::black(40, 40, 1);
        img.set_pixel(10, 10, &[255]);
        let map = AffineMap {
            sx: 2.0,
            sy: 2.0,
            dx: 3.0,
            dy: -4.0,
        };
        let k = CameraIntrinsics::centered(10.0, 64, 64);
        let out = remap_image(&img, &map, &k);
        let (mut sx, mut sy, mut m) = (0.0, 0.0, 0.0);
        for y in 0..64 {
            for x in 0..64 {
                let v = out.pixel(x, y)[0] as f64;
                sx += v * x as f64;
                sy += v * y as f64;
                m += v;
            }
        }
        assert!((sx / m - 23.0).abs() < 1e-9 && (sy / m - 16.0).abs() < 1e-9);
        assert_eq!(out.pixel(23, 16)[0], 255);
    }

    #[test]
    fn content_pushed_out_is_black() {
        let img = test_image(16, 16);
        let map = AffineMap {
            dx: 1000.0,
            ..AffineMap::IDENTITY
        };
        let out = remap_image(&img, &map, &CameraIntrinsics::centered(8.0, 16, 16));
        assert!(out.pixels.iter().all(|&p| p == 0));
    }

    fn wrist_at(x: f64, y: f64, z: f64) -> HandPose {
        let mut p = HandPose::rest(Side::Right);
        p.tau = Vec3::new(x, y, z);
        p
    }

    #[test]
    fn depth_scale_examples() {
        let k = CameraIntrinsics::centered(100.0, 32, 32);
        let img = test_image(32, 32);
        let poses = [wrist_at(0.1, 0.0, 0.5)];
        let (same, im, _) =
            depth_scale_augment(&poses, &img, &k, 1.0, DEFAULT_LAMBDA_RANGE).unwrap();
        assert_eq!((same.as_slice(), &im), (poses.as_slice(), &img));
        let (deeper, _, rec) =
            depth_scale_augment(&poses, &img, &k, 1.4, DEFAULT_LAMBDA_RANGE).unwrap();
        assert_eq!(deeper[0].tau, Vec3::new(0.1, 0.0, 0.5 * 1.4));
        assert_eq!(rec.kind, AugmentKind::DepthScale { lambda_s: 1.4 });
        let (two, _, _) = depth_scale_augment(&poses, &img, &k, 2.0, (0.5, 2.0)).unwrap();
        assert_eq!(two[0].tau, Vec3::new(0.1, 0.0, 1.0));
        assert!(matches!(
            depth_scale_augment(&poses, &img, &k, 2.0, DEFAULT_LAMBDA_RANGE),
            Err(Error::AugmentRange(_))
        ));
        assert!(matches!(
            depth_scale_augment(
                &[wrist_at(0.0, 0.0, -1.0)],
                &img,
                &k,
                1.0,
                DEFAULT_LAMBDA_RANGE
            ),
            Err(Error::BehindCamera(_))
        ));
    }

    #[test]
    fn inplane_quarter_turn() {
        let k = CameraIntrinsics::centered(100.0, 32, 32);
        let img = test_image(32, 32);
        let poses = [wrist_at(0.1, 0.0, 0.5)];
        let (same, im, _) = inplane_rotate_augment(&poses, &img, &k, 0.0).unwrap();
        assert_eq!((same.as_slice(), &im), (poses.as_slice(), &img));
        let (rot, _, _) =
            inplane_rotate_augment(&poses, &img, &k, std::f64::consts::FRAC_PI_2).unwrap();
        assert!((rot[0].tau - Vec3::new(0.0, 0.1, 0.5)).norm() < 1e-15);
        assert!(inplane_rotate_augment(&poses, &img, &k, -std::f64::consts::PI).is_err());
    }

    #[test]
    fn reexpress_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let poses: Vec<HandPose> = (0..5)
            .map(|_| {
                let mut p = wrist_at(
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(0.3..0.8),
                );
                p.r_rot = AxisAngle::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                p
            })
            .collect();
        let id = reexpress_in_frame(&poses, &FramePose::identity()).unwrap();
        for (a, b) in id.iter().zip(&poses) {
            assert!((a.tau - b.tau).norm() < 1e-15);
            assert!((global_rotation(a) - global_rotation(b)).norm() < 1e-12);
        }
        let frame = FramePose::of_pose(&poses[0]);
        let local = reexpress_in_frame(&poses, &frame).unwrap();
        assert!(local[0].tau.norm() < 1e-15);
        assert!(local[0].r_rot.angle() < 1e-12);
        let back = express_in_camera(&local, &frame).unwrap();
        for (a, b) in back.iter().zip(&poses) {
            assert!((a.tau - b.tau).norm() < 1e-10);
            assert!((global_rotation(a) - global_rotation(b)).norm() < 1e-10);
        }
    }

    #[test]
    fn reference_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert_eq!(
                sample_reference_frame(40, 0.0, 15.0, 100, &mut rng).unwrap(),
                40
            );
        }
        let a = sample_reference_frame(200, 10.0, 15.0, 300, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        let b = sample_reference_frame(200, 10.0, 15.0, 300, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        assert_eq!(a, b);
        assert!((51..=200).contains(&a));
        for _ in 0..50 {
            assert!(sample_reference_frame(3, 10.0, 15.0, 300, &mut rng).unwrap() <= 3);
        }
        assert!(sample_reference_frame(0, 1.0, 15.0, 0, &mut rng).is_err());
    }

    #[test]
    fn record_json_shape() {
        let r = AugmentRecord {
            kind: AugmentKind::InplaneRotation { phi: 0.5 },
            source: "s1".into(),
        };
        let j = serde_json::to_string(&r).unwrap();
        assert_eq!(j, r#"{"kind":"inplane_rotation","phi":0.5,"source":"s1"}"#);
        let back: AugmentRecord = serde_json::from_str(&j).unwrap();
        assert_eq!(back, r);
    }
}
