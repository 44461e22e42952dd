#![no_main]
use libfuzzer_sys::fuzz_target;
use osrkit::experiments::ResultTable;
use osrkit::metrics::Report;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = Report::parse_tsv(text);
    let _ = ResultTable::parse_tsv(text);
});
