#![no_main]
use libfuzzer_sys::fuzz_target;
use mcqa_engine::reader::{parse_answer, UNPARSED};

fuzz_target!(|text: &str| {
    let labels = ["A", "B", "C", "D"];
    let p = parse_answer(text, &labels);
    assert!(p.label() == UNPARSED || labels.contains(&p.label()));
});
