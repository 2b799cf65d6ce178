#![no_main]

use libfuzzer_sys::fuzz_target;
use netfl::LocalDataset;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ds) = LocalDataset::parse_csv(text) {
        let again = LocalDataset::parse_csv(&ds.to_csv()).expect("own output parses");
        assert_eq!(ds, again);
    }
});
