//! Bessel and sine-integral sweeps against independent references.

use std::f64::consts::PI;

use gmc_core::special::{bessel_j, si, BESSEL_ASYMPTOTIC_MIN, BESSEL_SERIES_MAX};

/// Composite Simpson on `[a, b]` with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn sweep() -> Vec<f64> {
    let mut x: Vec<f64> = (1..=400).map(|i| 0.05 * 1.02f64.powi(i)).collect();
    x.extend([BESSEL_SERIES_MAX, BESSEL_ASYMPTOTIC_MIN, BESSEL_ASYMPTOTIC_MIN + 1.0]);
    x
}

#[test]
fn half_integer_orders_match_closed_forms() {
    let mut worst = 0.0f64;
    for x in sweep() {
        let c = (2.0 / (PI * x)).sqrt();
        let refs = [
            (-0.5, c * x.cos()),
            (0.5, c * x.sin()),
            (1.5, c * (x.sin() / x - x.cos())),
            (2.5, c * ((3.0 / (x * x) - 1.0) * x.sin() - 3.0 * x.cos() / x)),
        ];
        for (nu, want) in refs {
            let got = bessel_j(nu, x);
            worst = worst.max((got - want).abs() / c);
        }
    }
    assert!(worst < 1e-10, "worst scaled error {worst:e}");
}

#[test]
fn integer_orders_match_bessel_integral() {
    // J_n(x) = (1/pi) int_0^pi cos(n t - x sin t) dt, brute force.
    let mut worst = 0.0f64;
    for x in sweep().into_iter().filter(|x| *x < 300.0).step_by(7) {
        for n in 0..=3 {
            let panels = 2 * (200 + 4 * x as usize);
            let want = simpson(|t| (n as f64 * t - x * t.sin()).cos(), 0.0, PI, panels) / PI;
            worst = worst.max((bessel_j(n as f64, x) - want).abs());
        }
    }
    assert!(worst < 1e-10, "worst abs error {worst:e}");
}

#[test]
fn recurrence_holds_across_branches() {
    // J_nu + J_{nu+2} = 2 (nu+1)/x J_{nu+1}, scaled by the envelope sqrt(2/(pi x)).
    let mut worst = 0.0f64;
    for nu in [0.0, 0.3, 0.75, 1.0, 1.2, 2.6] {
        for x in sweep() {
            let l = bessel_j(nu, x) + bessel_j(nu + 2.0, x);
            let r = 2.0 * (nu + 1.0) / x * bessel_j(nu + 1.0, x);
            let envelope = (2.0 / (PI * x)).sqrt().min(1.0);
            worst = worst.max((l - r).abs() / envelope);
        }
    }
    assert!(worst < 1e-9, "worst scaled residual {worst:e}");
}

#[test]
fn known_zeros() {
    let j0 = [2.404825557695773, 5.520078110286311, 8.653727912911013, 30.634606468431975];
    let j1 = [3.831705970207512, 7.015586669815619, 10.173468135062722, 32.189679910974404];
    for z in j0 {
        assert!(bessel_j(0.0, z).abs() < 1e-9, "J0({z}) = {:e}", bessel_j(0.0, z));
    }
    for z in j1 {
        assert!(bessel_j(1.0, z).abs() < 1e-9, "J1({z}) = {:e}", bessel_j(1.0, z));
    }
}

#[test]
fn continuous_at_branch_switches() {
    for nu in [0.0, 0.5, 1.0, 1.3, 2.5] {
        for b in [BESSEL_SERIES_MAX, BESSEL_ASYMPTOTIC_MIN + nu * nu] {
            let (lo, hi) = (bessel_j(nu, b * (1.0 - 1e-12)), bessel_j(nu, b * (1.0 + 1e-12)));
            assert!((lo - hi).abs() < 1e-10, "nu={nu} at {b}: {lo} vs {hi}");
        }
    }
}

#[test]
fn sine_integral_matches_quadrature() {
    for x in [0.01, 0.5, 1.0, 3.0, 7.5, 20.0, 60.0] {
        let panels = 2 * (500 + 40 * x as usize);
        let want = simpson(|t| if t == 0.0 { 1.0 } else { t.sin() / t }, 0.0, x, panels);
        assert!((si(x) - want).abs() < 1e-11, "Si({x}) = {} vs {want}", si(x));
    }
    // Si(inf) = pi/2 with oscillating tail ~ -cos x / x.
    let x = 1e4;
    assert!((si(x) - (PI / 2.0 - x.cos() / x)).abs() < 1e-7);
}
