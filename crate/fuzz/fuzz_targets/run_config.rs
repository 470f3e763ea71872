#![no_main]

use gmc_core::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = RunConfig::from_json(text) {
        let back = RunConfig::from_json(&c.to_json()).expect("valid config re-parses");
        assert_eq!(back.digest(), c.digest());
        // Schedule resolution must fail cleanly, not panic.
        let _ = c.epsilons();
    }
});
