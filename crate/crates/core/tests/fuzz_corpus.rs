//! The fuzz seeds must stay meaningful: valid ones parse, invalid ones are refused.

use std::fs;
use std::path::PathBuf;

use gmc_core::config::RunConfig;
use gmc_core::dump::GridDump;
use gmc_core::kernels::ModelSpec;
use gmc_core::oracles::GaussianVectorSpec;
use gmc_core::spectral::{parse_spectral_csv, SpectralProfile};

fn seed(target: &str, name: &str) -> Vec<u8> {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target).join(name);
    fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn text(target: &str, name: &str) -> String {
    String::from_utf8(seed(target, name)).unwrap()
}

#[test]
fn model_seeds() {
    for name in ["gaussian_1d.json", "cone_fejer_3d.json", "table_2d.json", "four_d.json"] {
        ModelSpec::from_json(&text("model_spec", name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn config_seeds() {
    for name in ["minimal_1d.json", "degeneracy_1d.json", "full_3d.json", "explicit_schedule.json"] {
        let c = RunConfig::from_json(&text("run_config", name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        c.epsilons().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn dump_seeds() {
    for name in ["field_1d.bin", "mass_1d.bin"] {
        let bytes = seed("field_dump", name);
        let d = GridDump::decode(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(d.to_bytes(), bytes);
    }
}

#[test]
fn spectral_seeds() {
    assert_eq!(parse_spectral_csv(&seed("spectral_csv", "small.csv")[..]).unwrap().0.len(), 3);
    assert!(parse_spectral_csv(&seed("spectral_csv", "non_finite.csv")[..]).is_err());
    let bytes = seed("spectral_csv", "with_sidecar.bin");
    let cut = bytes.iter().position(|&b| b == 0).unwrap();
    let side = std::str::from_utf8(&bytes[..cut]).unwrap();
    assert_eq!(SpectralProfile::read(&bytes[cut + 1..], side).unwrap().xi.len(), 2);
}

#[test]
fn gaussian_vector_seeds() {
    assert!(GaussianVectorSpec::from_json(&text("gaussian_vector", "pair.json")).is_ok());
    assert!(GaussianVectorSpec::from_json(&text("gaussian_vector", "three.json")).is_ok());
    assert!(GaussianVectorSpec::from_json(&text("gaussian_vector", "not_psd.json")).is_err());
}
