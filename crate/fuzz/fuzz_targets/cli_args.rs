#![no_main]
use libfuzzer_sys::fuzz_target;

// One argument per NUL-separated chunk; parsing only, nothing is run.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let argv = std::iter::once("osrkit").chain(text.split('\0'));
    if let Ok(cli) = osrkit_cli::parse_args(argv) {
        let _ = osrkit_cli::load_config(&cli);
    }
});
