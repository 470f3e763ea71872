#![no_main]

use gmc_core::oracles::GaussianVectorSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(g) = GaussianVectorSpec::from_json(text) {
        let back = GaussianVectorSpec::from_json(&g.to_json()).expect("valid spec re-parses");
        assert_eq!(back, g);
        let l = g.factor();
        assert_eq!(l.len(), g.size() * g.size());
        assert!(l.iter().all(|v| v.is_finite()));
    }
});
