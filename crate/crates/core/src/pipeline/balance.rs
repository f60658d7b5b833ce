//! Per-source corpus balancing with recorded augmentations, and the
//! deterministic path from a sample manifest to instruction samples.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    reexpress_in_frame, AugmentKind, AugmentRecord, FramePose, DEFAULT_LAMBDA_RANGE,
};
use crate::codec::Vocabulary;
use crate::error::{Error, Result};
use crate::mano::HandSkeleton;
use crate::rng::named_rng;
use crate::tokenizer::{tokenize_motion, HandMotion, PartTokenizer};

use super::record::SequenceRecord;
use super::templates::{
    instantiate, instantiate_templates, InstructionSample, Provenance, SpanTokens, TaskKind,
    TemplateOptions, TemplateReport, TemplateSet,
};
use super::window::{chunk_and_window, integer_fps, spans, Span};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BalanceConfig {
    /// Samples wanted from each source.
    pub targets: BTreeMap<String, usize>,
    /// Relative weight of each task; normalized internally.
    pub task_mix: BTreeMap<TaskKind, f64>,
    pub span_seconds: usize,
    pub lambda_range: (f64, f64),
    /// Share of augmented copies that use in-plane rotation rather than
    /// depth scaling.
    pub rotate_share: f64,
    /// Rotations are drawn from `(-max_rotation, max_rotation]`.
    pub max_rotation: f64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        BalanceConfig {
            targets: BTreeMap::new(),
            task_mix: TaskKind::ALL.into_iter().map(|t| (t, 1.0)).collect(),
            span_seconds: 2,
            lambda_range: DEFAULT_LAMBDA_RANGE,
            rotate_share: 0.5,
            max_rotation: PI,
        }
    }
}

impl BalanceConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.lambda_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("bad depth-scale range [{lo}, {hi}]")));
        }
        if !(0.0..=1.0).contains(&self.rotate_share) {
            return Err(Error::Config(format!("rotate share {}", self.rotate_share)));
        }
        if !(self.max_rotation > 0.0 && self.max_rotation <= PI) {
            return Err(Error::Config(format!("max rotation {}", self.max_rotation)));
        }
        if self.span_seconds == 0 {
            return Err(Error::Config("span of zero seconds".into()));
        }
        let total: f64 = self.task_mix.values().sum();
        if self
            .task_mix
            .values()
            .any(|w| !(*w >= 0.0 && w.is_finite()))
            || total <= 0.0
        {
            return Err(Error::Config(
                "task weights must be non-negative with a positive sum".into(),
            ));
        }
        if self
            .task_mix
            .get(&TaskKind::Prediction)
            .copied()
            .unwrap_or(0.0)
            > 0.0
            && self.span_seconds < 2
        {
            return Err(Error::Config(
                "prediction needs spans of at least two seconds".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: BalanceConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// One manifest line: a span, its task and the augmentations to apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub index: usize,
    pub source: String,
    pub task: TaskKind,
    pub span: Span,
    pub augments: Vec<AugmentRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCount {
    pub available: usize,
    pub target: usize,
    pub original: usize,
    pub augmented: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub sources: BTreeMap<String, SourceCount>,
    pub tasks: BTreeMap<TaskKind, usize>,
}

/// Splits `total` by `weights` with largest remainders, ties to the
/// earlier key.
pub fn apportion<K: Ord + Clone>(total: usize, weights: &BTreeMap<K, f64>) -> BTreeMap<K, usize> {
    let sum: f64 = weights.values().sum();
    let mut out: BTreeMap<K, usize> = BTreeMap::new();
    let mut rema: Vec<(f64, usize, K)> = Vec::new();
    let mut given = 0;
    for (i, (k, w)) in weights.iter().enumerate() {
        let exact = total as f64 * w / sum;
        let base = exact.floor() as usize;
        given += base;
        out.insert(k.clone(), base);
        rema.push((exact - base as f64, i, k.clone()));
    }
    rema.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, _, k) in rema.into_iter().take(total.saturating_sub(given)) {
        *out.get_mut(&k).expect("key present") += 1;
    }
    out
}

fn draw_augment<R: Rng>(cfg: &BalanceConfig, span: &Span, rng: &mut R) -> AugmentRecord {
    let kind = if rng.random_bool(cfg.rotate_share) {
        // (-max, max]
        AugmentKind::InplaneRotation {
            phi: cfg.max_rotation - rng.random_range(0.0..2.0 * cfg.max_rotation),
        }
    } else {
        AugmentKind::DepthScale {
            lambda_s: rng.random_range(cfg.lambda_range.0..=cfg.lambda_range.1),
        }
    };
    AugmentRecord {
        kind,
        source: format!("{}@{}", span.record_id, span.start),
    }
}

/// Selects exactly the target number of samples per source. Sources with
/// enough spans are subsampled; smaller ones keep every span and are topped
/// up with augmented copies. Tasks are dealt per source in proportion to
/// the mix. The result depends only on the inputs and `seed`.
pub fn balance_corpus(
    records: &[SequenceRecord],
    cfg: &BalanceConfig,
    seed: u64,
) -> Result<(Vec<SampleSpec>, BalanceReport)> {
    cfg.validate()?;
    let mut pools: BTreeMap<&str, Vec<Span>> = BTreeMap::new();
    for rec in records {
        let chunks = chunk_and_window(rec)?;
        pools.entry(rec.source.as_str()).or_default().extend(spans(
            rec,
            &chunks,
            cfg.span_seconds,
        )?);
    }
    let mut specs = Vec::new();
    let mut report = BalanceReport::default();
    for (source, &target) in &cfg.targets {
        let pool = pools.get(source.as_str()).cloned().unwrap_or_default();
        if target > 0 && pool.is_empty() {
            return Err(Error::Balance(format!(
                "source {source} has no usable spans for a target of {target}"
            )));
        }
        let mut rng = named_rng(seed, &format!("balance/{source}"));
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng);
        let mut chosen: Vec<(Span, Vec<AugmentRecord>)> = Vec::with_capacity(target);
        for k in 0..target {
            let span = pool[order[k % pool.len()]].clone();
            let augments = if k < pool.len() {
                Vec::new()
            } else {
                vec![draw_augment(cfg, &span, &mut rng)]
            };
            chosen.push((span, augments));
        }
        let quotas = apportion(target, &cfg.task_mix);
        let mut tasks: Vec<TaskKind> = quotas
            .iter()
            .flat_map(|(t, &n)| std::iter::repeat_n(*t, n))
            .collect();
        tasks.shuffle(&mut rng);
        let augmented = chosen.iter().filter(|(_, a)| !a.is_empty()).count();
        report.sources.insert(
            source.clone(),
            SourceCount {
                available: pool.len(),
                target,
                original: target - augmented,
                augmented,
            },
        );
        for ((span, augments), task) in chosen.into_iter().zip(tasks) {
            *report.tasks.entry(task).or_default() += 1;
            specs.push(SampleSpec {
                index: specs.len(),
                source: source.clone(),
                task,
                span,
                augments,
            });
        }
    }
    Ok((specs, report))
}

/// Manifest text: one JSON object per line.
pub fn manifest_text(specs: &[SampleSpec]) -> String {
    specs
        .iter()
        .map(|s| serde_json::to_string(s).expect("spec serializes") + "\n")
        .collect()
}

pub fn write_manifest(path: impl AsRef<Path>, specs: &[SampleSpec]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(manifest_text(specs).as_bytes())?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<SampleSpec>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Camera-space poses of a span with the augmentations applied, then
/// expressed in the wrist frame of the span's first observed hand.
pub fn span_motion(
    rec: &SequenceRecord,
    span: &Span,
    augments: &[AugmentRecord],
    lambda_range: (f64, f64),
) -> Result<Vec<HandMotion>> {
    let fps = integer_fps(rec)?;
    let end = span.start + span.seconds * fps;
    if end > rec.frames.len() || span.hands.is_empty() {
        return Err(Error::Windowing(format!(
            "span {}..{end} of record {} is out of range or empty",
            span.start, rec.id
        )));
    }
    let mut tracks = Vec::with_capacity(span.hands.len());
    for &side in &span.hands {
        let mut poses = rec.frames[span.start..end]
            .iter()
            .map(|f| f.hand(side).cloned())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| {
                Error::Windowing(format!(
                    "{} hand missing inside span at frame {} of {}",
                    side.as_str(),
                    span.start,
                    rec.id
                ))
            })?;
        for a in augments {
            poses = a.kind.apply_to_poses(&poses, lambda_range)?;
        }
        tracks.push((side, poses));
    }
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

/// Shared inputs for turning manifest entries into samples.
pub struct SampleContext<'a> {
    pub records: HashMap<&'a str, &'a SequenceRecord>,
    pub tok: &'a PartTokenizer,
    pub skel: &'a HandSkeleton,
    pub vocab: &'a Vocabulary,
    pub templates: &'a TemplateSet,
    pub lambda_range: (f64, f64),
}

impl<'a> SampleContext<'a> {
    pub fn new(
        records: &'a [SequenceRecord],
        tok: &'a PartTokenizer,
        skel: &'a HandSkeleton,
        vocab: &'a Vocabulary,
        templates: &'a TemplateSet,
    ) -> Self {
        SampleContext {
            records: records.iter().map(|r| (r.id.as_str(), r)).collect(),
            tok,
            skel,
            vocab,
            templates,
            lambda_range: DEFAULT_LAMBDA_RANGE,
        }
    }

    fn record(&self, id: &str) -> Result<&'a SequenceRecord> {
        self.records
            .get(id)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("unknown record {id}")))
    }

    /// Tokens and annotation text of a span.
    pub fn span_tokens(&self, span: &Span, augments: &[AugmentRecord]) -> Result<SpanTokens> {
        let rec = self.record(&span.record_id)?;
        let motion = span_motion(rec, span, augments, self.lambda_range)?;
        let tokens = tokenize_motion(&motion, self.tok, self.skel)?;
        let first_second = rec.frames[span.start].t.floor().max(0.0) as usize;
        Ok(SpanTokens {
            span: span.clone(),
            augments: augments.to_vec(),
            tokens,
            instruction: rec.annotations.span_text(first_second, span.seconds),
        })
    }

    /// Instruction samples for every manifest entry, in manifest order.
    pub fn build_samples(
        &self,
        specs: &[SampleSpec],
        opts: &TemplateOptions,
    ) -> Result<(Vec<InstructionSample>, TemplateReport)> {
        let items = specs
            .par_iter()
            .map(|s| Ok((s.task, self.span_tokens(&s.span, &s.augments)?)))
            .collect::<Result<Vec<_>>>()?;
        instantiate_templates(&items, self.templates, self.vocab, opts)
    }

    /// Rebuilds a sample from its task and provenance alone.
    pub fn replay(
        &self,
        task: TaskKind,
        prov: &Provenance,
        context_seconds: usize,
    ) -> Result<InstructionSample> {
        let span = Span {
            record_id: prov.record_id.clone(),
            chunk: prov.chunk,
            start: prov.start_frame,
            seconds: prov.seconds,
            hands: prov.hands.clone(),
        };
        let item = self.span_tokens(&span, &prov.augments)?;
        instantiate(
            task,
            &item,
            self.templates,
            prov.template,
            self.vocab,
            context_seconds,
        )?
        .map_err(|r| Error::InvalidInput(format!("provenance cannot yield a sample: {r:?}")))
    }
}
