#![no_main]

use gmc_core::kernels::ModelSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = ModelSpec::from_json(text) {
        let back = ModelSpec::from_json(&m.to_json()).expect("valid model re-parses");
        assert_eq!(back, m);
    }
});
