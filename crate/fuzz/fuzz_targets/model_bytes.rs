#![no_main]

use hmt_core::tokenizer::{read_model, write_model};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = read_model(data) {
        let bytes = write_model(&model);
        assert_eq!(read_model(&bytes).unwrap(), model);
    }
});
