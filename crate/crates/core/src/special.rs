//! Special functions: sine integral, Bessel functions of the first kind and
//! the inverse normal survival function.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use statrs::function::gamma::gamma;

use crate::quadrature::{integrate, integrate_panels, Tolerance};

/// Below this argument the Bessel power series is used.
pub const BESSEL_SERIES_MAX: f64 = 8.0;
/// Above `BESSEL_ASYMPTOTIC_MIN + nu^2` the Hankel expansion is used.
pub const BESSEL_ASYMPTOTIC_MIN: f64 = 40.0;

/// Sine integral `Si(x) = int_0^x sin(t)/t dt`.
pub fn si(x: f64) -> f64 {
    if x < 0.0 {
        return -si(-x);
    }
    if x <= 4.0 {
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut k = 0usize;
        loop {
            let a = (2 * k + 2) as f64;
            let b = (2 * k + 3) as f64;
            term *= -x2 / (a * b);
            let add = term / b;
            sum += add;
            if add.abs() < 1e-18 * sum.abs().max(1e-300) {
                break;
            }
            k += 1;
        }
        sum
    } else {
        // Continued fraction for E1(ix), modified Lentz.
        let tiny = 1e-300;
        let mut b = Complex64::new(1.0, x);
        let mut c = Complex64::new(1.0 / tiny, 0.0);
        let mut d = b.inv();
        let mut h = d;
        for i in 2..200 {
            let a = -((i - 1) * (i - 1)) as f64;
            b += 2.0;
            d = (d * a + b).inv();
            c = b + c.inv() * a;
            let del = c * d;
            h *= del;
            if (del.re - 1.0).abs() + del.im.abs() < 1e-16 {
                break;
            }
        }
        h *= Complex64::new(x.cos(), -x.sin());
        FRAC_PI_2 + h.im
    }
}

/// `(Si(x) - sin x) / x^3`, accurate down to `x = 0` where it equals 1/9.
pub fn si_minus_sin_over_cube(x: f64) -> f64 {
    let x = x.abs();
    if x < 2.0 {
        // sum_{k>=1} (-1)^(k+1) 2k x^(2k-2) / ((2k+1) (2k+1)!)
        let x2 = x * x;
        let mut fact_pow = 1.0 / 6.0; // x^(2k-2)/(2k+1)! at k = 1
        let mut sum = 0.0;
        for k in 1..40 {
            let kf = k as f64;
            let term = 2.0 * kf / (2.0 * kf + 1.0) * fact_pow;
            let signed = if k % 2 == 1 { term } else { -term };
            sum += signed;
            if term < 1e-19 {
                break;
            }
            fact_pow *= x2 / ((2.0 * kf + 2.0) * (2.0 * kf + 3.0));
        }
        sum
    } else {
        (si(x) - x.sin()) / (x * x * x)
    }
}

/// Bessel function of the first kind `J_nu(x)` for `nu >= -1/2`, `x >= 0`.
///
/// Branches: power series for `x <= 8`; Hankel asymptotics for
/// `x > 40 + nu^2`; in between, closed forms for half-integer orders, the
/// periodic trapezoid rule of Bessel's integral for integer orders and the
/// Schlafli integral otherwise.
pub fn bessel_j(nu: f64, x: f64) -> f64 {
    assert!(nu >= -0.5, "bessel_j: order must be >= -1/2");
    assert!(x >= 0.0, "bessel_j: argument must be nonnegative");
    if x == 0.0 {
        return if nu == 0.0 { 1.0 } else { 0.0 };
    }
    if x <= BESSEL_SERIES_MAX {
        return series(nu, x);
    }
    if x > BESSEL_ASYMPTOTIC_MIN + nu * nu {
        return hankel(nu, x);
    }
    middle(nu, x)
}

fn middle(nu: f64, x: f64) -> f64 {
    let twice = 2.0 * nu;
    if twice.fract() == 0.0 && (twice as i64) % 2 != 0 {
        return half_integer(nu, x);
    }
    if nu.fract() == 0.0 {
        return integer_trapezoid(nu as usize, x);
    }
    schlafli(nu, x)
}

fn series(nu: f64, x: f64) -> f64 {
    let half = 0.5 * x;
    let q = -half * half;
    let mut term = half.powf(nu) / gamma(nu + 1.0);
    let mut sum = term;
    for k in 1..200 {
        let kf = k as f64;
        term *= q / (kf * (kf + nu));
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-30) {
            break;
        }
    }
    sum
}

fn hankel(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut p = 0.0;
    let mut q = 0.0;
    let mut term: f64 = 1.0;
    let mut last = f64::INFINITY;
    let eight_x = 8.0 * x;
    for k in 0..120 {
        let mag = term.abs();
        if mag > last || mag < 1e-17 {
            break;
        }
        last = mag;
        match k % 4 {
            0 => p += term,
            1 => q += term,
            2 => p -= term,
            _ => q -= term,
        }
        let odd = (2 * k + 1) as f64;
        term *= (mu - odd * odd) / ((k + 1) as f64 * eight_x);
    }
    let chi = x - (0.5 * nu + 0.25) * PI;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

fn half_integer(nu: f64, x: f64) -> f64 {
    let pref = (2.0 / (PI * x)).sqrt();
    if nu < 0.0 {
        return pref * x.cos();
    }
    // Spherical Bessel upward recurrence, stable for x > n.
    let n = (nu - 0.5).round() as usize;
    let (s, c) = x.sin_cos();
    let mut j_prev = s / x;
    if n == 0 {
        return pref * x * j_prev;
    }
    let mut j_cur = s / (x * x) - c / x;
    for m in 1..n {
        let next = (2 * m + 1) as f64 / x * j_cur - j_prev;
        j_prev = j_cur;
        j_cur = next;
    }
    pref * x * j_cur
}

fn integer_trapezoid(n: usize, x: f64) -> f64 {
    let m = (x + 2.0 * n as f64 + 40.0).ceil() as usize;
    let nf = n as f64;
    let step = 2.0 * PI / m as f64;
    let mut sum = 0.0;
    for i in 0..m {
        let tau = i as f64 * step;
        sum += (nf * tau - x * tau.sin()).cos();
    }
    sum / m as f64
}

fn schlafli(nu: f64, x: f64) -> f64 {
    let tol = Tolerance::new(1e-14, 1e-13);
    let panels = ((x / PI).ceil() as usize).max(4);
    let breaks: Vec<f64> = (0..=panels).map(|i| PI * i as f64 / panels as f64).collect();
    let first = integrate_panels(|t: f64| (nu * t - x * t.sin()).cos(), &breaks, tol).value / PI;
    let s = (nu * PI).sin();
    if s == 0.0 {
        return first;
    }
    let upper = (40.0f64 / x).asinh() + 1.0;
    let second = integrate(|t: f64| (-x * t.sinh() - nu * t).exp(), 0.0, upper, tol).value;
    first - s / PI * second
}

/// Inverse of the standard normal survival function: `P(Z > x) = q`.
pub fn normal_isf(q: f64) -> f64 {
    assert!(q > 0.0 && q < 1.0, "normal_isf: q must lie in (0, 1)");
    std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * q)
}

/// Standard normal survival function.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2)
}
