#![no_main]

use hmt_core::codec::{
    deserialize_blocks, motion_blocks, parse_stream, serialize_blocks, Verdict, Vocabulary,
};
use hmt_core::mano::Side;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let vocab = Vocabulary::with_motion(16, 3);
    // small offsets keep most ids near the specials and motion range
    let ids: Vec<u32> = data.iter().map(|&b| 31990 + b as u32 % 40).collect();
    match parse_stream(&ids, &vocab) {
        Verdict::Valid(segs) => {
            assert!(segs.windows(2).all(|w| w[0].end == w[1].start));
            let blocks = motion_blocks(&ids, &vocab).expect("valid stream has blocks");
            if let Ok(tokens) = deserialize_blocks(&ids, &vocab, &[Side::Left]) {
                let again = serialize_blocks(&tokens, &vocab).unwrap();
                assert_eq!(motion_blocks(&again, &vocab).unwrap(), blocks);
            }
        }
        Verdict::Invalid(r) => assert!(r.position <= ids.len()),
    }
});
