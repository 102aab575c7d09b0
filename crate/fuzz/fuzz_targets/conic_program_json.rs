#![no_main]

use bisac_conic::{solve, ConicProgram};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(p) = ConicProgram::from_json(text) else { return };
    let again = ConicProgram::from_json(&p.to_json()).expect("re-parse");
    assert_eq!(again.to_json(), p.to_json());
    // keep solves cheap; validated programs of any size must not panic
    if text.len() < 4096 {
        let _ = solve(&p);
    }
});
