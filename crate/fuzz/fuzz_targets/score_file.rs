#![no_main]
use libfuzzer_sys::fuzz_target;
use osrkit::scoring::{parse_score_text, write_score_text};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_score_text(text) {
        if records.iter().all(|r| r.features.as_ref().map(Vec::len) == records[0].features.as_ref().map(Vec::len)) {
            assert_eq!(parse_score_text(&write_score_text(&records)).unwrap(), records);
        }
    }
});
