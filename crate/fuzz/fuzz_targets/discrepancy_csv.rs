#![no_main]

use libfuzzer_sys::fuzz_target;
use netfl::graphlearn::DiscrepancyMatrix;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(d) = DiscrepancyMatrix::parse_csv(text) {
        let again = DiscrepancyMatrix::parse_csv(&d.to_csv()).expect("own output parses");
        assert_eq!(d, again);
    }
});
