#![no_main]

use libfuzzer_sys::fuzz_target;
use netfl_harness::config::parse_config_with;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_config_with(text, None, true);
    let _ = parse_config_with(text, None, false);
});
