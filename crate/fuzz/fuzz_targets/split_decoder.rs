#![no_main]
use libfuzzer_sys::fuzz_target;
use osrkit::synthdata::{decode_split, encode_split};

fuzz_target!(|data: &[u8]| {
    if let Ok(images) = decode_split(data) {
        assert_eq!(decode_split(&encode_split(&images).unwrap()).unwrap(), images);
    }
});
