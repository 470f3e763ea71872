#![no_main]

use gmc_core::spectral::{parse_spectral_csv, SpectralProfile};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((xi, fhat, err)) = parse_spectral_csv(data) {
        assert!(xi.len() == fhat.len() && fhat.len() == err.len());
        assert!(err.iter().all(|e| *e >= 0.0));
    }
    // Sidecar and table separated by the first NUL byte.
    if let Some(cut) = data.iter().position(|&b| b == 0) {
        if let Ok(side) = std::str::from_utf8(&data[..cut]) {
            let _ = SpectralProfile::read(&data[cut + 1..], side);
        }
    }
});
