//! Radial Fourier transforms with the convention `f^(xi) = int e^{-2 i pi x.xi} f(x) dx`,
//! closed forms for the `ln+` kernel and a grid-based positivity checker.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{integrate_panels, QuadResult, Tolerance};
use crate::special::{bessel_j, si_minus_sin_over_cube};

/// A radial function `rho -> f(rho)` on `(0, inf)`.
pub trait RadialFunction: Sync {
    fn value(&self, rho: f64) -> f64;
    /// Radius beyond which the function vanishes, if compactly supported.
    fn support(&self) -> Option<f64>;
    /// Characteristic length, used to place oscillation checks.
    fn length_scale(&self) -> f64;
    /// Points where the function is not smooth.
    fn kinks(&self) -> Vec<f64> {
        self.support().into_iter().collect()
    }
    /// Truncation radius for integrals of non-compact functions.
    fn tail_radius(&self) -> f64 {
        self.support().unwrap_or(40.0 * self.length_scale())
    }
}

/// `ln+(scale / rho)`.
#[derive(Debug, Clone, Copy)]
pub struct LogPlus {
    pub scale: f64,
}

impl RadialFunction for LogPlus {
    fn value(&self, rho: f64) -> f64 {
        (self.scale / rho).ln().max(0.0)
    }
    fn support(&self) -> Option<f64> {
        Some(self.scale)
    }
    fn length_scale(&self) -> f64 {
        self.scale
    }
}

/// `exp(-rho^2 / (2 sigma^2))`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianProfile {
    pub sigma: f64,
}

impl RadialFunction for GaussianProfile {
    fn value(&self, rho: f64) -> f64 {
        (-0.5 * (rho / self.sigma).powi(2)).exp()
    }
    fn support(&self) -> Option<f64> {
        None
    }
    fn length_scale(&self) -> f64 {
        self.sigma
    }
    fn tail_radius(&self) -> f64 {
        // exp(-x^2/2) < 1e-40 beyond x = 13.6
        14.0 * self.sigma
    }
}

/// Indicator of `[0, radius]`.
#[derive(Debug, Clone, Copy)]
pub struct Indicator {
    pub radius: f64,
}

impl RadialFunction for Indicator {
    fn value(&self, rho: f64) -> f64 {
        if rho <= self.radius {
            1.0
        } else {
            0.0
        }
    }
    fn support(&self) -> Option<f64> {
        Some(self.radius)
    }
    fn length_scale(&self) -> f64 {
        self.radius
    }
}

/// Tent `(1 - rho / radius)+`.
#[derive(Debug, Clone, Copy)]
pub struct Triangle {
    pub radius: f64,
}

impl RadialFunction for Triangle {
    fn value(&self, rho: f64) -> f64 {
        (1.0 - rho / self.radius).max(0.0)
    }
    fn support(&self) -> Option<f64> {
        Some(self.radius)
    }
    fn length_scale(&self) -> f64 {
        self.radius
    }
}

/// Wraps a closure as a compactly supported radial function.
pub struct FnProfile<F> {
    pub f: F,
    pub support: f64,
    pub kinks: Vec<f64>,
}

impl<F: Fn(f64) -> f64 + Sync> RadialFunction for FnProfile<F> {
    fn value(&self, rho: f64) -> f64 {
        (self.f)(rho)
    }
    fn support(&self) -> Option<f64> {
        Some(self.support)
    }
    fn length_scale(&self) -> f64 {
        self.support
    }
    fn kinks(&self) -> Vec<f64> {
        let mut k = self.kinks.clone();
        k.push(self.support);
        k
    }
}

/// Surface area of the unit sphere in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        4 => 2.0 * PI * PI,
        _ => 2.0 * PI.powf(d as f64 / 2.0) / statrs::function::gamma::gamma(d as f64 / 2.0),
    }
}

/// Weight `w` such that `f^(xi) = int_0^inf w(d, xi, rho) f(rho) d rho`.
pub fn hankel_kernel(d: usize, xi: f64, rho: f64) -> f64 {
    if xi == 0.0 {
        return sphere_area(d) * rho.powi(d as i32 - 1);
    }
    let z = 2.0 * PI * xi * rho;
    match d {
        1 => 2.0 * z.cos(),
        2 => 2.0 * PI * rho * bessel_j(0.0, z),
        3 => 2.0 * rho * z.sin() / xi,
        4 => 2.0 * PI * rho * rho * bessel_j(1.0, z) / xi,
        _ => {
            let nu = (d as f64 - 2.0) / 2.0;
            2.0 * PI * rho.powf(d as f64 / 2.0) * bessel_j(nu, z) / xi.powf(nu)
        }
    }
}

fn transform_breaks(support: f64, kinks: &[f64], half_period: f64) -> Vec<f64> {
    let mut breaks = vec![0.0, support];
    breaks.extend(kinks.iter().copied().filter(|&k| k > 0.0 && k < support));
    if half_period.is_finite() {
        let n = (support / half_period).ceil() as usize;
        breaks.extend((1..n).map(|i| i as f64 * half_period));
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    breaks
}

/// Default tolerance for radial transforms.
pub const TRANSFORM_TOL: Tolerance = Tolerance {
    abs: 1e-13,
    rel: 1e-11,
    max_panels: 400_000,
};

/// Radial Fourier transform of `profile` in dimension `d` at frequency `xi >= 0`.
///
/// Panels are split at every half period of the oscillating weight so that
/// each panel carries at most one sign change of the Bessel factor.
pub fn radial_fourier(profile: &dyn RadialFunction, d: usize, xi: f64) -> QuadResult {
    radial_fourier_tol(profile, d, xi, TRANSFORM_TOL)
}

pub fn radial_fourier_tol(
    profile: &dyn RadialFunction,
    d: usize,
    xi: f64,
    tol: Tolerance,
) -> QuadResult {
    let upper = profile.tail_radius();
    let half_period = if xi > 0.0 { 0.5 / xi } else { f64::INFINITY };
    let breaks = transform_breaks(upper, &profile.kinks(), half_period);
    integrate_panels(
        |rho| hankel_kernel(d, xi, rho) * profile.value(rho),
        &breaks,
        tol,
    )
}

/// Closed form of the transform of `ln+(t / |x|)` in `R^3`:
/// `(Si(2 pi xi t) - sin(2 pi xi t)) / (2 pi^2 xi^3)`.
pub fn logplus_hat_3d(xi: f64, t: f64) -> f64 {
    let x = 2.0 * PI * xi * t;
    // (Si(x) - sin x) / x^3 times x^3 / (2 pi^2 xi^3) = 4 pi t^3 (...)
    4.0 * PI * t.powi(3) * si_minus_sin_over_cube(x)
}

/// Transform of `ln+(t / |x|)` in `R^d` for `d` in 1..=3, closed form.
pub fn logplus_hat(d: usize, xi: f64, t: f64) -> f64 {
    let x = 2.0 * PI * xi * t;
    match d {
        1 => {
            if x < 1e-4 {
                // Si(x)/x = 1 - x^2/18 + ...
                2.0 * t * (1.0 - x * x / 18.0)
            } else {
                crate::special::si(x) / (PI * xi)
            }
        }
        2 => {
            if x < 1e-3 {
                // (1 - J0(x)) / x^2 = 1/4 - x^2/64 + ...
                2.0 * PI * t * t * (0.25 - x * x / 64.0)
            } else {
                (1.0 - bessel_j(0.0, x)) / (2.0 * PI * xi * xi)
            }
        }
        3 => logplus_hat_3d(xi, t),
        _ => panic!("logplus_hat: closed form only for d <= 3"),
    }
}

/// Integral of `ln+(t / |x|)` over `R^d`.
pub fn logplus_integral(d: usize, t: f64) -> f64 {
    sphere_area(d) * t.powi(d as i32) / (d * d) as f64
}

/// Outcome of the grid-based positivity check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Certificate {
    NonnegativeOnGrid,
    SignOscillating,
    Indeterminate,
}

/// Tabulated radial spectrum with a positivity verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    pub dimension: usize,
    pub scale: f64,
    pub xi: Vec<f64>,
    pub fhat: Vec<f64>,
    pub err: Vec<f64>,
    pub certificate: Certificate,
}

/// Minimum number of consecutive fine points required in the oscillating range.
pub const DENSE_RUN: usize = 8;

/// Log-spaced grid over `xi * scale` in `[1e-2, 1e3]` with fine windows at
/// `xi * scale` near 10, 100 and 1000 that resolve a period `1/scale`.
pub fn standard_grid(scale: f64) -> Vec<f64> {
    let mut g: Vec<f64> = (0..240)
        .map(|i| 10f64.powf(-2.0 + 5.0 * i as f64 / 239.0) / scale)
        .collect();
    for &start in &[10.0, 100.0, 998.0] {
        g.extend((0..17).map(|i| (start + i as f64 / 8.0) / scale));
    }
    g.sort_by(f64::total_cmp);
    g.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * b.abs());
    g
}

fn check_grid(grid: &[f64], scale: f64) -> Result<()> {
    if grid.len() < 2 || grid.windows(2).any(|w| w[1] <= w[0]) || grid[0] <= 0.0 {
        return invalid("frequency grid must be positive and strictly increasing");
    }
    let max = *grid.last().unwrap();
    if max * scale < 50.0 {
        return Err(Error::GridTooCoarse {
            required: 50.0 / scale,
            found: max,
        });
    }
    let fine = 0.25 / scale;
    let mut best = 1usize;
    let mut run = 1usize;
    let mut min_gap = f64::INFINITY;
    for w in grid.windows(2) {
        if w[0] * scale < 10.0 {
            continue;
        }
        let gap = w[1] - w[0];
        min_gap = min_gap.min(gap);
        if gap <= fine {
            run += 1;
            best = best.max(run);
        } else {
            run = 1;
        }
    }
    if best < DENSE_RUN {
        return Err(Error::GridTooCoarse {
            required: fine,
            found: min_gap,
        });
    }
    Ok(())
}

/// Evaluates the radial transform of `profile` on `grid` and classifies its sign.
pub fn check_positive_definite(
    profile: &dyn RadialFunction,
    d: usize,
    grid: &[f64],
) -> Result<SpectralProfile> {
    if d == 0 {
        return invalid("dimension must be positive");
    }
    let scale = profile.length_scale();
    check_grid(grid, scale)?;
    let vals: Vec<QuadResult> = grid
        .par_iter()
        .map(|&xi| radial_fourier(profile, d, xi))
        .collect();
    let fhat: Vec<f64> = vals.iter().map(|q| q.value).collect();
    let err: Vec<f64> = vals.iter().map(|q| q.error).collect();
    if let Some(i) = vals.iter().position(|q| !q.converged) {
        return Err(Error::Quadrature {
            value: vals[i].value,
            error: vals[i].error,
            tolerance: TRANSFORM_TOL.abs,
        });
    }
    let certificate = classify(grid, &fhat, &err, scale);
    Ok(SpectralProfile {
        dimension: d,
        scale,
        xi: grid.to_vec(),
        fhat,
        err,
        certificate,
    })
}

fn classify(grid: &[f64], fhat: &[f64], err: &[f64], scale: f64) -> Certificate {
    let negative = fhat.iter().zip(err).any(|(v, e)| *v < -e);
    if !negative {
        return Certificate::NonnegativeOnGrid;
    }
    let mut pos = false;
    let mut neg = false;
    for ((xi, v), e) in grid.iter().zip(fhat).zip(err) {
        if xi * scale >= 10.0 {
            pos |= *v > *e;
            neg |= *v < -*e;
        }
    }
    if pos && neg {
        Certificate::SignOscillating
    } else {
        Certificate::Indeterminate
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    dimension: usize,
    scale: f64,
    points: usize,
    certificate: Certificate,
}

impl SpectralProfile {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "xi,fhat,err")?;
        for ((x, f), e) in self.xi.iter().zip(&self.fhat).zip(&self.err) {
            writeln!(w, "{x:e},{f:e},{e:e}")?;
        }
        Ok(())
    }

    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(&Sidecar {
            dimension: self.dimension,
            scale: self.scale,
            points: self.xi.len(),
            certificate: self.certificate,
        })
        .expect("sidecar serializes")
    }

    /// Parses the CSV table and its JSON sidecar.
    pub fn read<R: BufRead>(csv: R, sidecar: &str) -> Result<Self> {
        let side: Sidecar = serde_json::from_str(sidecar)?;
        let (xi, fhat, err) = parse_spectral_csv(csv)?;
        if xi.len() != side.points {
            return Err(Error::Decode(format!(
                "sidecar announces {} points, table has {}",
                side.points,
                xi.len()
            )));
        }
        Ok(Self {
            dimension: side.dimension,
            scale: side.scale,
            xi,
            fhat,
            err,
            certificate: side.certificate,
        })
    }
}

/// Columns of a spectral table.
pub type SpectralColumns = (Vec<f64>, Vec<f64>, Vec<f64>);

/// Parses a `xi,fhat,err` table.
pub fn parse_spectral_csv<R: BufRead>(csv: R) -> Result<SpectralColumns> {
    let mut lines = csv.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Decode("empty spectral table".into()))??;
    if header.trim() != "xi,fhat,err" {
        return Err(Error::Decode(format!("unexpected header {header:?}")));
    }
    let (mut xi, mut fhat, mut err) = (Vec::new(), Vec::new(), Vec::new());
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let mut next = |name: &str| -> Result<f64> {
            let raw = cols
                .next()
                .ok_or_else(|| Error::Decode(format!("row {}: missing {name}", n + 2)))?;
            raw.trim()
                .parse::<f64>()
                .map_err(|e| Error::Decode(format!("row {}: {name}: {e}", n + 2)))
        };
        let x = next("xi")?;
        let f = next("fhat")?;
        let e = next("err")?;
        if cols.next().is_some() {
            return Err(Error::Decode(format!("row {}: extra columns", n + 2)));
        }
        if !x.is_finite() || !f.is_finite() || !e.is_finite() || e < 0.0 {
            return Err(Error::Decode(format!("row {}: non-finite or negative bound", n + 2)));
        }
        xi.push(x);
        fhat.push(f);
        err.push(e);
    }
    Ok((xi, fhat, err))
}

/// Piecewise-linear table on increasing nodes, zero beyond the last node.
#[derive(Debug, Clone)]
pub struct Tabulated {
    nodes: Vec<f64>,
    values: Vec<f64>,
}

impl Tabulated {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>) -> Self {
        debug_assert_eq!(nodes.len(), values.len());
        Self { nodes, values }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = &self.nodes;
        if x <= n[0] {
            return self.values[0];
        }
        if x > *n.last().unwrap() {
            return 0.0;
        }
        let i = n.partition_point(|&v| v < x);
        let (x0, x1) = (n[i - 1], n[i]);
        let t = (x - x0) / (x1 - x0);
        self.values[i - 1] * (1.0 - t) + self.values[i] * t
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Tabulates the transform of a compactly supported profile up to `xi_max`.
pub fn tabulate_transform(
    profile: &dyn RadialFunction,
    d: usize,
    xi_max: f64,
) -> Result<(Tabulated, f64)> {
    let a = profile.tail_radius();
    let fine = 1.0 / (64.0 * a);
    let knee = 64.0 / a;
    let mut nodes: Vec<f64> = Vec::new();
    let mut x = 0.0;
    while x <= knee.min(xi_max) {
        nodes.push(x);
        x += fine;
    }
    let mut x = knee;
    while x < xi_max {
        x *= 1.01;
        nodes.push(x);
    }
    let vals: Vec<QuadResult> = nodes
        .par_iter()
        .map(|&xi| radial_fourier(profile, d, xi))
        .collect();
    let mut worst = 0.0f64;
    for q in &vals {
        if !q.converged {
            return Err(Error::Quadrature {
                value: q.value,
                error: q.error,
                tolerance: TRANSFORM_TOL.abs,
            });
        }
        worst = worst.max(q.error);
    }
    Ok((
        Tabulated::new(nodes, vals.iter().map(|q| q.value).collect()),
        worst,
    ))
}
