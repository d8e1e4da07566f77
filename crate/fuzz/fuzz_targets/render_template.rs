#![no_main]
use std::collections::BTreeMap;

use libfuzzer_sys::fuzz_target;
use mcqa_engine::llm::PromptTemplate;

fuzz_target!(|text: &str| {
    let t = PromptTemplate::new("fuzz", text);
    let names = t.placeholders();
    let bindings: BTreeMap<&str, String> = names.iter().map(|n| (n.as_str(), "x".to_string())).collect();
    let _ = t.render(&bindings);
});
