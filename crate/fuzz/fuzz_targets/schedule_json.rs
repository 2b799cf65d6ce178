#![no_main]

use libfuzzer_sys::fuzz_target;
use netfl::algorithms::AsyncSchedule;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = AsyncSchedule::from_json(text) {
        let _ = s.max_delay();
        let again = AsyncSchedule::from_json(&s.to_json().expect("serializes")).expect("own output parses");
        assert_eq!(s, again);
    }
});
