#![no_main]

use hmt_core::alignment::{AugmentRecord, CameraIntrinsics};
use hmt_core::codec::Vocabulary;
use hmt_core::mano::HandSkeleton;
use hmt_core::pipeline::{BalanceConfig, SampleSpec, TemplateSet};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&which, rest)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else {
        return;
    };
    match which % 7 {
        0 => {
            if let Ok(v) = Vocabulary::from_json(text) {
                assert_eq!(Vocabulary::from_json(&v.to_json()).unwrap(), v);
            }
        }
        1 => {
            let _ = CameraIntrinsics::from_json(text);
        }
        2 => {
            let _ = HandSkeleton::from_json(text);
        }
        3 => {
            let _ = BalanceConfig::from_json(text);
        }
        4 => {
            let _ = TemplateSet::from_json(text);
        }
        5 => {
            let _ = serde_json::from_str::<SampleSpec>(text);
        }
        _ => {
            let _ = serde_json::from_str::<AugmentRecord>(text);
        }
    }
});
