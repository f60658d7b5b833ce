#![no_main]

use hmt_core::pipeline::SequenceRecord;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|line: &str| {
    let _ = SequenceRecord::from_json(line);
});
