#![no_main]

use hmt_core::codec::{format_ids, format_tags, parse_stream, parse_text, Vocabulary};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let vocab = Vocabulary::with_motion(512, 8);
    let Ok(ids) = parse_text(text, &vocab) else {
        return;
    };
    // both printed forms read back to the same ids
    assert_eq!(parse_text(&format_ids(&ids), &vocab).unwrap(), ids);
    assert_eq!(parse_text(&format_tags(&ids, &vocab), &vocab).unwrap(), ids);
    let _ = parse_stream(&ids, &vocab);
});
