use gmc_core::chaos::{region_volume, region_weights, Region};
use gmc_core::config::RunConfig;
use gmc_core::dump::{DumpHeader, GridDump, GridKind, FORMAT, VERSION};
use gmc_core::field::GridSpec;
use gmc_core::kernels::ModelSpec;
use gmc_core::oracles::GaussianVectorSpec;
use gmc_core::rng::{normal, Purpose, StreamKey};
use gmc_core::spectral::parse_spectral_csv;
use gmc_core::stats::{ks_statistic, ols};
use proptest::prelude::*;

fn dump(kind: GridKind, n: usize, values: Vec<f64>, seed: u64) -> GridDump {
    GridDump {
        header: DumpHeader {
            format: FORMAT.into(),
            version: VERSION,
            kind,
            grid: GridSpec::new(1, n, 2.0).unwrap(),
            epsilon: 0.125,
            level: 2,
            variance: 1.5,
            scale: 1.0,
            seed,
            replica: 3,
            ladder_digest: "ab".into(),
            config_digest: Some("cd".into()),
        },
        values,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_dump_round_trips(values in prop::collection::vec(0.0f64..1e6, 8..=8), seed in any::<u64>()) {
        let d = dump(GridKind::Mass, 8, values, seed);
        prop_assert_eq!(GridDump::decode(&d.to_bytes()).unwrap(), d);
    }

    #[test]
    fn grid_dump_truncation_is_rejected(values in prop::collection::vec(-5.0f64..5.0, 8..=8), cut in 1usize..64) {
        let bytes = dump(GridKind::Field, 8, values, 1).to_bytes();
        prop_assert!(GridDump::decode(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn decoders_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
        let _ = GridDump::decode(&bytes);
        let text = String::from_utf8_lossy(&bytes);
        let _ = RunConfig::from_json(&text);
        let _ = ModelSpec::from_json(&text);
        let _ = GaussianVectorSpec::from_json(&text);
        let _ = parse_spectral_csv(text.as_bytes());
    }

    #[test]
    fn gaussian_vector_round_trips(a in prop::collection::vec(-2.0f64..2.0, 9), w in prop::collection::vec(0.1f64..3.0, 3)) {
        // A A^T is positive semidefinite by construction.
        let cov: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|j| (0..3).map(|k| a[3 * i + k] * a[3 * j + k]).sum()).collect())
            .collect();
        let spec = GaussianVectorSpec::new(cov, w).unwrap();
        let back = GaussianVectorSpec::from_json(&spec.to_json()).unwrap();
        prop_assert_eq!(back, spec);
    }

    #[test]
    fn config_digest_survives_round_trip(seed in any::<u64>(), replicas in 1u32..10_000, l2 in 0.0f64..1.9) {
        let text = format!(
            r#"{{"kernel":{{"dimension":1,"lambda2":{l2},"scale":1.0}},"mollifier":"gaussian","grid":{{"n":256,"length":4.0}},"replicas":{replicas},"seed":{seed}}}"#
        );
        let c = RunConfig::from_json(&text).unwrap();
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        prop_assert_eq!(back.digest(), c.digest());
        prop_assert_eq!(back, c);
    }

    #[test]
    fn streams_are_reproducible_and_distinct(seed in any::<u64>(), replica in any::<u32>(), shell in any::<u16>()) {
        let draw = |k: StreamKey| {
            let mut r = k.rng();
            (0..4).map(|_| normal(&mut r)).collect::<Vec<f64>>()
        };
        let key = StreamKey::new(seed, replica, shell, Purpose::Field);
        prop_assert_eq!(draw(key), draw(key));
        prop_assert_ne!(draw(key), draw(StreamKey::new(seed, replica, shell, Purpose::Brownian)));
        prop_assert_ne!(draw(key), draw(StreamKey::new(seed, replica.wrapping_add(1), shell, Purpose::Field)));
        prop_assert_ne!(draw(key), draw(StreamKey::new(seed, replica, shell.wrapping_add(1), Purpose::Field)));
    }

    #[test]
    fn cube_volume_is_exact_and_additive(x in -1.0f64..0.5, y in -1.0f64..0.5, side in 0.05f64..1.0) {
        let grid = GridSpec::with_origin(2, 64, 4.0, vec![-2.0, -2.0]).unwrap();
        let whole = region_volume(&grid, &Region::cube(&[x, y], side)).unwrap();
        prop_assert!((whole - side * side).abs() < 1e-12);
        let h = side / 2.0;
        let parts: f64 = [[x, y], [x + h, y], [x, y + h], [x + h, y + h]]
            .iter()
            .map(|lo| region_volume(&grid, &Region::cube(lo, h)).unwrap())
            .sum();
        prop_assert!((parts - whole).abs() < 1e-12);
    }

    #[test]
    fn region_weights_lie_in_the_unit_interval(x in -1.0f64..1.0, r in 0.01f64..0.9) {
        let grid = GridSpec::with_origin(2, 64, 4.0, vec![-2.0, -2.0]).unwrap();
        for (_, w) in region_weights(&grid, &Region::ball(&[x, 0.0], r)).unwrap() {
            prop_assert!((0.0..=1.0).contains(&w));
        }
    }

    #[test]
    fn ols_recovers_lines_and_ignores_offsets(a in -5.0f64..5.0, b in -5.0f64..5.0, shift in -10.0f64..10.0) {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().map(|t| a + b * t + 0.01 * (t * 7.0).sin()).collect();
        let fit = ols(&x, &y);
        let moved: Vec<f64> = y.iter().map(|v| v + shift).collect();
        let fit2 = ols(&x, &moved);
        prop_assert!((fit.slope - fit2.slope).abs() < 1e-9);
        prop_assert!((fit2.intercept - fit.intercept - shift).abs() < 1e-9);
        prop_assert!((fit.slope - b).abs() < 0.05);
    }

    #[test]
    fn ks_statistic_is_a_symmetric_distance(a in prop::collection::vec(-3.0f64..3.0, 1..40), b in prop::collection::vec(-3.0f64..3.0, 1..40)) {
        let ab = ks_statistic(&a, &b);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ks_statistic(&b, &a)).abs() < 1e-15);
        prop_assert_eq!(ks_statistic(&a, &a), 0.0);
        // Monotone maps leave ranks unchanged.
        let ea: Vec<f64> = a.iter().map(|v| v.exp()).collect();
        let eb: Vec<f64> = b.iter().map(|v| v.exp()).collect();
        prop_assert!((ks_statistic(&ea, &eb) - ab).abs() < 1e-15);
    }
}
