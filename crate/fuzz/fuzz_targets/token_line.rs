#![no_main]

use hmt_cli::io::TokenLine;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|line: &str| {
    if let Ok(t) = TokenLine::parse(line, 1) {
        assert_eq!(TokenLine::parse(&t.format(), 1).unwrap(), t);
    }
});
