#![no_main]
use libfuzzer_sys::fuzz_target;
use mcqa_engine::llm::ScriptedBackend;

fuzz_target!(|raw: &str| {
    let _ = ScriptedBackend::from_json("fuzz", raw);
});
