#![no_main]

use gmc_core::dump::GridDump;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = GridDump::decode(data) {
        let again = GridDump::decode(&d.to_bytes()).expect("encoded dump decodes");
        assert_eq!(again, d);
    }
});
