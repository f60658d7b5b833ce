//! Camera subcommands: align and augment.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use hmt_core::alignment::{
    append_records, normalize_fov, remap_image, weak_perspective_map, AugmentKind, AugmentRecord,
    CameraIntrinsics, Image, DEFAULT_LAMBDA_RANGE,
};
use hmt_core::mano::{HandPose, Side};
use hmt_core::pipeline::{read_records, write_records, SequenceRecord};
use hmt_core::rng::named_rng;
use rand::Rng;
use serde_json::{json, Value};

use crate::io::{require_file, require_parent};
use crate::CliError;

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Intrinsics of the camera that took the image.
    #[arg(long)]
    pub from: PathBuf,
    /// Target intrinsics; a 90° field of view at the source resolution when
    /// omitted.
    #[arg(long)]
    pub to: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn align(a: &AlignArgs) -> Result<Value, CliError> {
    require_file(&a.image)?;
    require_file(&a.from)?;
    if let Some(t) = &a.to {
        require_file(t)?;
    }
    require_parent(&a.out)?;
    let src = CameraIntrinsics::load(&a.from)?;
    let dst = match &a.to {
        Some(p) => CameraIntrinsics::load(p)?,
        None => normalize_fov(&src),
    };
    let img = Image::load_png(&a.image)?;
    let map = weak_perspective_map(&src, &dst);
    remap_image(&img, &map, &dst).save_png(&a.out)?;
    Ok(json!({ "map": map, "target": dst }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AugmentChoice {
    DepthScale,
    Rotate,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub kind: AugmentChoice,
    /// Depth factor or rotation angle in radians; drawn from the seed when
    /// omitted.
    #[arg(long, allow_hyphen_values = true)]
    pub value: Option<f64>,
    #[arg(long, env = "HMT_SEED")]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_LAMBDA_RANGE.0)]
    pub lambda_min: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA_RANGE.1)]
    pub lambda_max: f64,
    /// Frame image to transform alongside; the records file must then hold
    /// exactly one record.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub image_out: Option<PathBuf>,
    /// JSON-lines file the augmentation records are appended to.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

fn apply_to_record(
    rec: &SequenceRecord,
    kind: &AugmentKind,
    range: (f64, f64),
) -> Result<SequenceRecord, CliError> {
    let mut out = rec.clone();
    for side in [Side::Left, Side::Right] {
        let idx: Vec<usize> = (0..rec.frames.len())
            .filter(|&i| rec.frames[i].hand(side).is_some())
            .collect();
        let poses: Vec<HandPose> = idx
            .iter()
            .filter_map(|&i| rec.frames[i].hand(side).cloned())
            .collect();
        let moved = kind.apply_to_poses(&poses, range)?;
        for (i, p) in idx.into_iter().zip(moved) {
            *out.frames[i].hand_mut(side) = Some(p);
        }
    }
    Ok(out)
}

pub fn augment(a: &AugmentArgs) -> Result<Value, CliError> {
    require_file(&a.records)?;
    require_parent(&a.out)?;
    if let Some(i) = &a.image {
        require_file(i)?;
        if a.image_out.is_none() {
            return Err(CliError::usage("--image needs --image-out"));
        }
    }
    if a.value.is_none() && a.seed.is_none() {
        return Err(CliError::usage("give --value or a --seed to draw it from"));
    }
    let range = (a.lambda_min, a.lambda_max);
    let records = read_records(&a.records)?;
    if a.image.is_some() && records.len() != 1 {
        return Err(CliError::usage(
            "--image needs a records file with exactly one record",
        ));
    }
    let mut out = Vec::with_capacity(records.len());
    let mut augments = Vec::with_capacity(records.len());
    for rec in &records {
        let value = match (a.value, a.seed) {
            (Some(v), _) => v,
            (None, Some(seed)) => {
                let mut rng = named_rng(seed, &format!("augment/{}", rec.id));
                match a.kind {
                    AugmentChoice::DepthScale => rng.random_range(range.0..=range.1),
                    AugmentChoice::Rotate => {
                        std::f64::consts::PI - rng.random_range(0.0..std::f64::consts::TAU)
                    }
                }
            }
            (None, None) => unreachable!("checked above"),
        };
        let kind = match a.kind {
            AugmentChoice::DepthScale => AugmentKind::DepthScale { lambda_s: value },
            AugmentChoice::Rotate => AugmentKind::InplaneRotation { phi: value },
        };
        out.push(apply_to_record(rec, &kind, range)?);
        let source = match &a.image {
            Some(p) => p.display().to_string(),
            None => rec.id.clone(),
        };
        augments.push(AugmentRecord { kind, source });
    }
    if let (Some(path), Some(out_path)) = (&a.image, &a.image_out) {
        let img = Image::load_png(path)?;
        let rec = &records[0];
        let empty: [HandPose; 0] = [];
        let (_, image, _) = match augments[0].kind {
            AugmentKind::DepthScale { lambda_s } => hmt_core::alignment::depth_scale_augment(
                &empty,
                &img,
                &rec.intrinsics,
                lambda_s,
                range,
            )?,
            AugmentKind::InplaneRotation { phi } => {
                hmt_core::alignment::inplane_rotate_augment(&empty, &img, &rec.intrinsics, phi)?
            }
        };
        image.save_png(out_path)?;
    }
    write_records(&a.out, &out)?;
    if let Some(m) = &a.manifest {
        append_records(m, &augments)?;
    }
    Ok(json!({ "records": out.len(), "augments": augments }))
}
