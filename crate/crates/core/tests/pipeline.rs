use std::collections::BTreeMap;

use hmt_core::codec::Vocabulary;
use hmt_core::mano::{encode_feature, FeatureVariant, HandSkeleton, Side};
use hmt_core::pipeline::*;
use hmt_core::synthetic::{synthetic_record, synthetic_windows, MotionStyle};
use hmt_core::tokenizer::{train_tokenizer, PartTokenizer, QuantizerConfig, TrainOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_tokenizer() -> PartTokenizer {
    let skel = HandSkeleton::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let windows: Vec<_> = synthetic_windows(64, &MotionStyle::default(), &mut rng)
        .unwrap()
        .iter()
        .map(|w| encode_feature(w, FeatureVariant::D162, &skel, 15.0).unwrap())
        .collect();
    let config = QuantizerConfig {
        dim: 16,
        k_wrist: 32,
        k_finger: 32,
        layers: 2,
        ..QuantizerConfig::default()
    };
    let opts = TrainOptions {
        epochs: 0,
        ..TrainOptions::default()
    };
    train_tokenizer(&windows, config, &opts, |_, _| {})
        .unwrap()
        .0
}

fn corpus() -> Vec<SequenceRecord> {
    let style = MotionStyle::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut out = Vec::new();
    for (source, count) in [("big", 6), ("small", 1)] {
        for i in 0..count {
            out.push(synthetic_record(
                &format!("{source}-{i}"),
                source,
                6,
                &style,
                &mut rng,
            ));
        }
    }
    out
}

fn config() -> BalanceConfig {
    BalanceConfig {
        targets: [("big".to_string(), 40), ("small".to_string(), 18)]
            .into_iter()
            .collect(),
        ..BalanceConfig::default()
    }
}

#[test]
fn balance_hits_targets_and_repeats() {
    let records = corpus();
    let (a, report) = balance_corpus(&records, &config(), 11).unwrap();
    let (b, _) = balance_corpus(&records, &config(), 11).unwrap();
    assert_eq!(manifest_text(&a), manifest_text(&b));
    let (c, _) = balance_corpus(&records, &config(), 12).unwrap();
    assert_ne!(manifest_text(&a), manifest_text(&c));

    let big = &report.sources["big"];
    assert_eq!((big.original, big.augmented), (40, 0));
    // 6 s record, 2 s spans at half-second stride: 9 spans
    let small = &report.sources["small"];
    assert_eq!(
        (small.available, small.original, small.augmented),
        (9, 9, 9)
    );
    let tasks: BTreeMap<_, _> = report.tasks.clone();
    assert_eq!(tasks.values().sum::<usize>(), 58);
    assert!(a.iter().filter(|s| s.source == "small").count() == 18);
}

#[test]
fn empty_source_is_an_error() {
    let mut cfg = config();
    cfg.targets.insert("missing".into(), 3);
    assert!(balance_corpus(&corpus(), &cfg, 0).is_err());
}

#[test]
fn samples_replay_from_provenance() {
    let records = corpus();
    let tok = small_tokenizer();
    let skel = HandSkeleton::default();
    let vocab = Vocabulary::with_motion(
        tok.config.motion_vocab_size() as u32,
        tok.config.tokens_per_hand_second(),
    );
    let templates = TemplateSet::default();
    let ctx = SampleContext::new(&records, &tok, &skel, &vocab, &templates);
    let (specs, _) = balance_corpus(&records, &config(), 5).unwrap();
    let opts = TemplateOptions {
        context_seconds: 1,
        seed: 5,
    };
    let (samples, report) = ctx.build_samples(&specs, &opts).unwrap();
    assert_eq!(report.produced, specs.len());
    let (again, _) = ctx.build_samples(&specs, &opts).unwrap();
    assert_eq!(samples, again);
    for s in &samples {
        let hands = s.provenance.hands.len();
        assert_eq!(s.duration_blocks(&vocab), s.duration * hands);
        let replayed = ctx
            .replay(s.task, &s.provenance, opts.context_seconds)
            .unwrap();
        assert_eq!(
            serde_json::to_string(&replayed).unwrap(),
            serde_json::to_string(s).unwrap()
        );
    }
    assert!(samples.iter().any(|s| !s.provenance.augments.is_empty()));
    assert!(samples
        .iter()
        .any(|s| s.provenance.hands == vec![Side::Left, Side::Right]));
}

#[test]
fn records_survive_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    let records = corpus();
    write_records(&path, &records).unwrap();
    assert_eq!(ingest(&path).unwrap(), records);
}

fn glitchy_record(seed: u64, glitches: &[(usize, f64)]) -> SequenceRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rec = synthetic_record("g", "s", 3, &MotionStyle::default(), &mut rng);
    for &(frame, size) in glitches {
        if let Some(p) = rec.frames[frame].right.as_mut() {
            p.tau.y += size;
        }
    }
    rec
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn chunks_tile_records(frames in 0usize..400) {
        let mut rng = ChaCha8Rng::seed_from_u64(frames as u64);
        let mut rec = synthetic_record("t", "s", 27, &MotionStyle::default(), &mut rng);
        rec.frames.truncate(frames);
        let chunks = chunk_and_window(&rec).unwrap();
        let mut next = 0;
        for c in &chunks {
            prop_assert_eq!(c.start, next);
            prop_assert!(c.len() <= 150 && !c.is_empty());
            prop_assert!(c.windows.iter().all(|&w| w >= c.start && w + 15 <= c.end));
            next = c.end;
        }
        prop_assert_eq!(next, frames);
    }

    #[test]
    fn repairs_never_lengthen_the_wrist_path(
        seed in 0u64..1000,
        glitches in proptest::collection::vec((1usize..44, 0.3f64..2.0), 1..4),
    ) {
        let rec = glitchy_record(seed, &glitches);
        let (out, report) = clean_sequence(&rec, &CleanOptions::default()).unwrap();
        prop_assert!(report.invalidated >= 1);
        if out.len() == 1 && out[0].frames.len() == rec.frames.len() {
            let before = wrist_path_length(&rec, Side::Right, 0..rec.frames.len());
            let after = wrist_path_length(&out[0], Side::Right, 0..rec.frames.len());
            prop_assert!(after <= before + 1e-12);
        }
    }
}
