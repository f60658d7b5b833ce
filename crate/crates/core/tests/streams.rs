//! Interleaved stream serialization, validation and masking.

use hmt_core::codec::{
    allowed_mask, deserialize_blocks, filtered_motion_loss, format_ids, format_tags, logit_mask,
    parse_stream, parse_text, serialize_blocks, DecodeMode, DecodeState, LossFilterConfig,
    SegmentKind, Verdict, Vocabulary, MASKED_LOGIT,
};
use hmt_core::mano::Side;
use hmt_core::tokenizer::{HandTokens, MotionTokens};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vocab() -> Vocabulary {
    Vocabulary::with_motion(64, 5)
}

fn tokens(v: &Vocabulary, hands: usize, seconds: usize, seed: u64) -> MotionTokens {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sides = [Side::Left, Side::Right];
    MotionTokens {
        hands: (0..hands)
            .map(|h| HandTokens {
                side: sides[h],
                seconds: (0..seconds)
                    .map(|_| {
                        (0..v.block_len)
                            .map(|_| rng.random_range(0..v.motion.len()))
                            .collect()
                    })
                    .collect(),
            })
            .collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn serialized_blocks_parse_and_round_trip(hands in 1usize..3, seconds in 1usize..6, seed in any::<u64>()) {
        let v = vocab();
        let t = tokens(&v, hands, seconds, seed);
        let ids = serialize_blocks(&t, &v).unwrap();
        match parse_stream(&ids, &v) {
            Verdict::Valid(segs) => {
                prop_assert_eq!(segs.len(), hands * seconds);
                prop_assert!(segs.iter().all(|s| s.kind == SegmentKind::Motion && s.end - s.start == v.block_len + 2));
            }
            Verdict::Invalid(r) => prop_assert!(false, "rejected: {r}"),
        }
        let sides: Vec<Side> = t.hands.iter().map(|h| h.side).collect();
        prop_assert_eq!(deserialize_blocks(&ids, &v, &sides).unwrap(), t);
        prop_assert_eq!(parse_text(&format_ids(&ids), &v).unwrap(), ids.clone());
        prop_assert_eq!(parse_text(&format_tags(&ids, &v), &v).unwrap(), ids);
    }

    #[test]
    fn constrained_rollouts_are_valid(seed in any::<u64>(), target in 0usize..4) {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = DecodeState::new(DecodeMode::Block, Some(target));
        let mut ids = Vec::new();
        while !state.finished && ids.len() < 400 {
            let mask = allowed_mask(&state, &v).unwrap();
            let allowed: Vec<u32> = (0..mask.len() as u32).filter(|&i| mask[i as usize]).collect();
            prop_assert!(!allowed.is_empty());
            // favour specials so rollouts terminate
            let specials: Vec<u32> = allowed.iter().copied().filter(|&i| i >= v.text.end && !v.motion.contains(i)).collect();
            let id = if !specials.is_empty() && rng.random_bool(0.3) {
                specials[rng.random_range(0..specials.len())]
            } else {
                allowed[rng.random_range(0..allowed.len())]
            };
            state.advance(id, &v).unwrap();
            ids.push(id);
        }
        prop_assert!(parse_stream(&ids, &v).is_valid(), "{:?}", parse_stream(&ids, &v));
        if state.finished {
            prop_assert_eq!(state.blocks_done, target);
        }
    }

    #[test]
    fn masking_keeps_motion_logits(seed in any::<u64>(), p in 0.0f64..=1.0) {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits: Vec<f64> = (0..v.size()).map(|_| rng.random_range(-10.0..10.0)).collect();
        let mut masked = logits.clone();
        let fired = logit_mask(&mut masked, true, p, &v, &mut rng).unwrap();
        for (id, (a, b)) in logits.iter().zip(&masked).enumerate() {
            if v.motion.contains(id as u32) || !fired {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            } else {
                prop_assert_eq!(*b, MASKED_LOGIT);
            }
        }
        let mut text = logits.clone();
        prop_assert!(!logit_mask(&mut text, false, p, &v, &mut rng).unwrap());
        prop_assert_eq!(text, logits);
    }

    #[test]
    fn filtered_loss_lies_within_the_kept_band(losses in proptest::collection::vec(0.0f64..10.0, 1..60)) {
        let cfg = LossFilterConfig::default();
        let m = filtered_motion_loss(&losses, &cfg).unwrap();
        let lo = losses.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
    }
}

#[test]
fn free_mode_has_no_mask() {
    let v = vocab();
    assert!(allowed_mask(&DecodeState::new(DecodeMode::Free, None), &v).is_err());
}

#[test]
fn vocabulary_json_round_trip() {
    let v = vocab();
    assert_eq!(Vocabulary::from_json(&v.to_json()).unwrap(), v);
    assert!(Vocabulary::from_json("{}").is_err());
}

#[test]
fn rejections_point_at_the_fault() {
    let v = vocab();
    let sp = v.specials;
    let m = v.motion.start;
    let short = [sp.mot_open, m, m, sp.mot_close];
    match parse_stream(&short, &v) {
        Verdict::Invalid(r) => assert_eq!(r.position, 3),
        other => panic!("{other:?}"),
    }
    assert!(!parse_stream(&[m], &v).is_valid());
    assert!(!parse_stream(&[sp.eos, 0], &v).is_valid());
    assert!(!parse_stream(&[sp.mot_close], &v).is_valid());
    assert!(parse_stream(&[0, 1, sp.eos], &v).is_valid());
}
