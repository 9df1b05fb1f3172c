#![no_main]

use ezalm_core::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // The config parser must never panic on arbitrary text; errors are fine.
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = RunConfig::parse(text);
    }
});
