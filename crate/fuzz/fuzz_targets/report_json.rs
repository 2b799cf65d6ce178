#![no_main]

use libfuzzer_sys::fuzz_target;
use netfl_harness::Report;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(r) = Report::from_json(text) {
        let _ = r.to_csv();
        let _ = r.summary.all_bounds_hold();
        let again = Report::from_json(&r.to_json().expect("serializes")).expect("own output parses");
        assert_eq!(r, again);
    }
});
