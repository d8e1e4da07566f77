#![no_main]
use libfuzzer_sys::fuzz_target;
use mcqa_engine::kgcc::parse_knowledge_points;

fuzz_target!(|text: &str| {
    assert!(parse_knowledge_points(text, 3).len() <= 3);
});
