#![no_main]
use libfuzzer_sys::fuzz_target;
use mcqa_engine::dataset::{parse_record, DatasetFormat};

fuzz_target!(|line: &str| {
    for format in DatasetFormat::ALL {
        if let Ok(q) = parse_record(line, format, 1) {
            assert!(q.options.len() >= 2);
        }
    }
});
