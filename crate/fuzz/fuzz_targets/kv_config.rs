#![no_main]
use libfuzzer_sys::fuzz_target;
use osrkit::config::RunConfig;
use osrkit::kvformat::KvMap;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(kv) = KvMap::parse(text) {
        assert_eq!(KvMap::parse(&kv.to_text()).unwrap(), kv);
        if let Ok(cfg) = RunConfig::from_kv(&kv) {
            assert_eq!(RunConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        }
    }
});
