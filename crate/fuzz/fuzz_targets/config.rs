#![no_main]
use libfuzzer_sys::fuzz_target;
use mcqa_engine::config::Config;

fuzz_target!(|raw: &str| {
    let _ = Config::parse(raw, std::path::Path::new("."));
});
