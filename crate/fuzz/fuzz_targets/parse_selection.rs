#![no_main]
use libfuzzer_sys::fuzz_target;
use mcqa_engine::kads::parse_selection;

fuzz_target!(|text: &str| {
    let ids = parse_selection(text, 10, 5);
    assert!(ids.len() <= 5);
    assert!(ids.iter().all(|i| (1..=10).contains(i)));
});
