#![no_main]

use bisac_cli::Scenario;
use libfuzzer_sys::fuzz_target;

// Parsing and resolving must reject bad input with an error, never a panic,
// and an accepted scenario must survive a round trip.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(s) = Scenario::from_json(text) else { return };
    let _ = s.resolve();
    let again = Scenario::from_json(&s.to_json()).expect("re-parse");
    assert_eq!(again.to_json(), s.to_json());
});
