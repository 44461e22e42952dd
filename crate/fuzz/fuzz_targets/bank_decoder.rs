#![no_main]
use libfuzzer_sys::fuzz_target;
use osrkit::cambank::{decode_bank, encode_bank};

fuzz_target!(|data: &[u8]| {
    if let Ok(bank) = decode_bank(data) {
        assert_eq!(decode_bank(&encode_bank(&bank)).unwrap(), bank);
    }
});
