#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|line: &str| {
    let _ = mcqa_engine::corpus::parse_record(line, "fuzz", 1);
});
