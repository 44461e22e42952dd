#![no_main]
use libfuzzer_sys::fuzz_target;
use osrkit::training::{decode_state, encode_state};

fuzz_target!(|data: &[u8]| {
    if let Ok(state) = decode_state(data) {
        assert_eq!(decode_state(&encode_state(&state)).unwrap(), state);
    }
});
