//! Covariance kernels `f(x) = lambda2 ln+(R/|x|) + g(|x|)`, the cone kernel,
//! sigma-positive layer decompositions and mollifiers.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{integrate, integrate_panels, QuadResult, Tolerance};
use crate::spectral::{self, RadialFunction, Tabulated};
use crate::special::bessel_j;

/// Value of a kernel at a point; `Singular` marks the unmollified origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelValue {
    Finite(f64),
    Singular,
}

impl KernelValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            KernelValue::Finite(v) => Some(v),
            KernelValue::Singular => None,
        }
    }
}

/// Radial remainder table `(r, g(r))`, linear in between, constant beyond the last row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct RadialTable {
    r: Vec<f64>,
    g: Vec<f64>,
}

impl TryFrom<Vec<[f64; 2]>> for RadialTable {
    type Error = String;
    fn try_from(rows: Vec<[f64; 2]>) -> std::result::Result<Self, String> {
        if rows.len() < 2 {
            return Err("remainder table needs at least two rows".into());
        }
        if rows[0][0] != 0.0 {
            return Err("remainder table must start at r = 0".into());
        }
        if rows.iter().any(|row| !row[0].is_finite() || !row[1].is_finite()) {
            return Err("remainder table entries must be finite".into());
        }
        if rows.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err("remainder table radii must increase strictly".into());
        }
        Ok(Self {
            r: rows.iter().map(|row| row[0]).collect(),
            g: rows.iter().map(|row| row[1]).collect(),
        })
    }
}

impl From<RadialTable> for Vec<[f64; 2]> {
    fn from(t: RadialTable) -> Self {
        t.r.iter().zip(&t.g).map(|(&r, &g)| [r, g]).collect()
    }
}

impl RadialTable {
    pub fn new(rows: Vec<[f64; 2]>) -> Result<Self> {
        Self::try_from(rows).map_err(Error::Invalid)
    }

    pub fn eval(&self, r: f64) -> f64 {
        let last = self.r.len() - 1;
        if r >= self.r[last] {
            return self.g[last];
        }
        let i = self.r.partition_point(|&v| v <= r);
        let t = (r - self.r[i - 1]) / (self.r[i] - self.r[i - 1]);
        self.g[i - 1] * (1.0 - t) + self.g[i] * t
    }

    pub fn tail(&self) -> f64 {
        *self.g.last().unwrap()
    }

    pub fn extent(&self) -> f64 {
        *self.r.last().unwrap()
    }

    pub fn sup_abs(&self) -> f64 {
        self.g.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn radii(&self) -> &[f64] {
        &self.r
    }
}

/// Bounded continuous remainder `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Remainder {
    Zero,
    Constant { value: f64 },
    Table { table: RadialTable },
    /// Remainder that turns `lambda2 ln+` into the cone kernel.
    Cone,
}

/// Radial covariance model.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub dimension: usize,
    pub lambda2: f64,
    pub scale: f64,
    pub remainder: Remainder,
    sup_g: f64,
}

impl KernelSpec {
    /// Validates and builds a kernel. `dimension` may be 4 so that the
    /// positivity gate, rather than parsing, is what rejects it.
    pub fn new(dimension: usize, lambda2: f64, scale: f64, remainder: Remainder) -> Result<Self> {
        if !(1..=4).contains(&dimension) {
            return invalid(format!("dimension {dimension} outside 1..=4"));
        }
        if !(lambda2.is_finite() && lambda2 >= 0.0) {
            return invalid(format!("lambda2 must be a nonnegative number, got {lambda2}"));
        }
        let critical = 2.0 * dimension as f64;
        if (lambda2 - critical).abs() <= 1e-12 * critical {
            return invalid(format!("lambda2 = 2d = {critical} is the excluded critical value"));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return invalid(format!("scale must be positive, got {scale}"));
        }
        let sup_g = match &remainder {
            Remainder::Zero => 0.0,
            Remainder::Constant { value } => {
                if !value.is_finite() {
                    return invalid("constant remainder must be finite");
                }
                value.abs()
            }
            Remainder::Table { table } => table.sup_abs(),
            Remainder::Cone => {
                if dimension > 3 {
                    return invalid("cone kernel is defined for d <= 3");
                }
                cone_remainder_sup(lambda2, scale, dimension)
            }
        };
        Ok(Self {
            dimension,
            lambda2,
            scale,
            remainder,
            sup_g,
        })
    }

    /// Pure `lambda2 ln+(scale/|x|)` kernel.
    pub fn log_plus(dimension: usize, lambda2: f64, scale: f64) -> Result<Self> {
        Self::new(dimension, lambda2, scale, Remainder::Zero)
    }

    /// Recorded `sup |g|`.
    pub fn sup_remainder(&self) -> f64 {
        self.sup_g
    }

    pub fn remainder_value(&self, r: f64) -> f64 {
        match &self.remainder {
            Remainder::Zero => 0.0,
            Remainder::Constant { value } => *value,
            Remainder::Table { table } => table.eval(r),
            Remainder::Cone => cone_remainder(self.lambda2, self.scale, self.dimension, r),
        }
    }

    pub fn is_pure_log(&self) -> bool {
        matches!(self.remainder, Remainder::Zero)
            || matches!(self.remainder, Remainder::Constant { value } if value == 0.0)
    }

    /// Constant value `g` takes beyond its tabulated range.
    pub fn remainder_tail(&self) -> f64 {
        match &self.remainder {
            Remainder::Zero | Remainder::Cone => 0.0,
            Remainder::Constant { value } => *value,
            Remainder::Table { table } => table.tail(),
        }
    }

    /// Extent of the non-constant part of `g`.
    fn remainder_extent(&self) -> f64 {
        match &self.remainder {
            Remainder::Table { table } => table.extent(),
            _ => self.scale,
        }
    }
}

/// Evaluates `f(r) = lambda2 ln+(R/r) + g(r)`; the origin is singular.
pub fn eval_kernel(spec: &KernelSpec, r: f64) -> KernelValue {
    assert!(r >= 0.0, "eval_kernel: negative radius");
    if r == 0.0 {
        return KernelValue::Singular;
    }
    KernelValue::Finite(spec.lambda2 * (spec.scale / r).ln().max(0.0) + spec.remainder_value(r))
}

/// Finite part of the kernel as a radial profile (the `ln+` term only
/// diverges at the origin, which quadrature never samples).
impl RadialFunction for KernelSpec {
    fn value(&self, rho: f64) -> f64 {
        self.lambda2 * (self.scale / rho).ln().max(0.0) + self.remainder_value(rho)
    }
    fn support(&self) -> Option<f64> {
        if self.remainder_tail() == 0.0 {
            Some(self.scale.max(self.remainder_extent()))
        } else {
            None
        }
    }
    fn length_scale(&self) -> f64 {
        self.scale
    }
    fn kinks(&self) -> Vec<f64> {
        let mut k = vec![self.scale];
        if let Remainder::Table { table } = &self.remainder {
            k.extend_from_slice(table.radii());
        }
        k
    }
}

/// The kernel minus the constant tail of `g`; compactly supported, so its
/// transform is an ordinary function. The tail itself transforms to an atom.
pub struct DecayingPart<'a>(pub &'a KernelSpec);

impl RadialFunction for DecayingPart<'_> {
    fn value(&self, rho: f64) -> f64 {
        self.0.value(rho) - self.0.remainder_tail()
    }
    fn support(&self) -> Option<f64> {
        Some(self.0.scale.max(self.0.remainder_extent()))
    }
    fn length_scale(&self) -> f64 {
        self.0.scale
    }
    fn kinks(&self) -> Vec<f64> {
        let mut k = self.0.kinks();
        k.extend(self.support());
        k
    }
}

/// Volume of two balls of diameter 1 at distance `s`, relative to one ball.
pub fn lens(d: usize, s: f64) -> f64 {
    let s = s.abs();
    if s >= 1.0 {
        return 0.0;
    }
    match d {
        1 => 1.0 - s,
        2 => 2.0 / PI * (s.acos() - s * (1.0 - s * s).sqrt()),
        3 => 0.5 * (2.0 + s) * (1.0 - s) * (1.0 - s),
        _ => {
            // Regularized incomplete beta: I_{1-s^2}((d+1)/2, 1/2).
            statrs::function::beta::beta_reg((d as f64 + 1.0) / 2.0, 0.5, 1.0 - s * s)
        }
    }
}

/// Volume of the ball of diameter 1 in `R^d`.
pub fn unit_diameter_ball_volume(d: usize) -> f64 {
    let half = 0.5f64;
    PI.powf(d as f64 / 2.0) / statrs::function::gamma::gamma(d as f64 / 2.0 + 1.0)
        * half.powi(d as i32)
}

/// Tolerance used for cone-kernel quadrature.
pub const CONE_TOL: Tolerance = Tolerance {
    abs: 1e-13,
    rel: 1e-8,
    max_panels: 20_000,
};

/// `int_x^1 (lens(s) - 1)/s ds` for `x` in `[0, 1]`.
fn cone_log_defect(d: usize, x: f64) -> QuadResult {
    match d {
        1 => QuadResult {
            value: -(1.0 - x),
            error: 0.0,
            converged: true,
        },
        3 => QuadResult {
            value: -4.0 / 3.0 + 1.5 * x - x.powi(3) / 6.0,
            error: 0.0,
            converged: true,
        },
        _ => integrate(|s| (lens(d, s) - 1.0) / s, x, 1.0, CONE_TOL),
    }
}

/// Remainder `g = f_cone - lambda2 ln+(T/r)` of the cone kernel.
pub fn cone_remainder(lambda2: f64, t: f64, d: usize, r: f64) -> f64 {
    let x = r / t;
    if x >= 1.0 {
        return 0.0;
    }
    lambda2 * (cone_log_defect(d, x).value + lens(d, x) / d as f64)
}

fn cone_remainder_sup(lambda2: f64, t: f64, d: usize) -> f64 {
    (0..=400)
        .map(|i| cone_remainder(lambda2, t, d, t * i as f64 / 400.0).abs())
        .fold(0.0, f64::max)
}

/// Cone kernel `lambda2 int_{C(0) cap C(x)} dy dt / t^{d+1}` with cones of
/// aperture `(t min T)/2`, normalized by the volume of a unit-diameter ball
/// so that the logarithmic coefficient is exactly `lambda2`.
///
/// The space integral is the lens volume, leaving a one-dimensional integral
/// in `t`; it is closed-form in `d = 1, 3`.
pub fn eval_cone_kernel(lambda2: f64, t: f64, d: usize, r: f64) -> Result<QuadResult> {
    if !(1..=3).contains(&d) {
        return invalid("cone kernel requires d in 1..=3");
    }
    if !(t > 0.0) || r < 0.0 {
        return invalid("cone kernel requires T > 0 and r >= 0");
    }
    let x = r / t;
    if x >= 1.0 {
        return Ok(QuadResult {
            value: 0.0,
            error: 0.0,
            converged: true,
        });
    }
    if x == 0.0 {
        return invalid("cone kernel is singular at the origin");
    }
    let defect = cone_log_defect(d, x);
    let value = lambda2 * (-x.ln() + defect.value + lens(d, x) / d as f64);
    let res = QuadResult {
        value,
        error: lambda2 * defect.error,
        converged: defect.converged,
    };
    if !res.converged {
        return Err(Error::Quadrature {
            value: res.value,
            error: res.error,
            tolerance: CONE_TOL.rel,
        });
    }
    Ok(res)
}

/// `n`-th sigma-positive layer of `ln+(T/r)`.
///
/// `d = 1` uses `(t - r)+` over the band `[T/n, T/(n-1))` of the measure
/// `dt/t^2` on `[0, T)` plus the atom `delta_T / T` (layer 1).
/// `d = 2` applies the same with `r^{1/2}`, `T^{1/2}` and a factor 2.
pub fn sigma_positive_layer(n: usize, d: usize, t: f64, r: f64) -> Result<f64> {
    if n == 0 {
        return invalid("layer index starts at 1");
    }
    let (u, top, factor) = match d {
        1 => (r, t, 1.0),
        2 => (r.sqrt(), t.sqrt(), 2.0),
        _ => return invalid("sigma-positive layers are modeled for d in {1, 2}"),
    };
    if u >= top {
        return Ok(0.0);
    }
    if n == 1 {
        return Ok(factor * (top - u) / top);
    }
    let a = top / n as f64;
    let b = top / (n - 1) as f64;
    if u >= b {
        return Ok(0.0);
    }
    let lo = a.max(u);
    // int_lo^b (s - u)/s^2 ds
    Ok(factor * ((b / lo).ln() + u * (1.0 / b - 1.0 / lo)))
}

/// Admissible mollifier families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MollifierKind {
    Gaussian,
    Fejer,
}

/// Mollifier `theta^eps(x) = eps^{-d} theta(x / eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    pub kind: MollifierKind,
    pub epsilon: f64,
}

/// Level below which `theta^` is treated as negligible for grid resolution.
pub const RESOLUTION_LEVEL: f64 = 1e-3;

impl MollifierSpec {
    pub fn new(kind: MollifierKind, epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return invalid(format!("mollifier scale must be positive, got {epsilon}"));
        }
        Ok(Self { kind, epsilon })
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { epsilon, ..self }
    }

    /// Unit-scale profile `theta(|x|)` in dimension `d`.
    pub fn theta_unit(kind: MollifierKind, d: usize, r: f64) -> f64 {
        match kind {
            MollifierKind::Gaussian => (-0.5 * r * r).exp() / (2.0 * PI).powf(d as f64 / 2.0),
            MollifierKind::Fejer => {
                let nu = d as f64 / 2.0;
                let amp = if r < 1e-8 {
                    // J_nu(z)/z^nu -> 2^-nu / Gamma(nu+1)
                    0.5f64.powf(nu) * (PI / 2.0).powf(nu)
                        / statrs::function::gamma::gamma(nu + 1.0)
                } else {
                    0.5f64.powf(nu) * bessel_j(nu, PI * r) / r.powf(nu)
                };
                amp * amp / unit_diameter_ball_volume(d)
            }
        }
    }

    /// Unit-scale spectral profile `theta^(|xi|)`: decreasing with value 1 at 0.
    pub fn theta_hat_unit(kind: MollifierKind, d: usize, xi: f64) -> f64 {
        match kind {
            MollifierKind::Gaussian => (-2.0 * PI * PI * xi * xi).exp(),
            MollifierKind::Fejer => lens(d, xi),
        }
    }

    /// `theta^eps(|x|)`.
    pub fn theta(&self, d: usize, r: f64) -> f64 {
        Self::theta_unit(self.kind, d, r / self.epsilon) / self.epsilon.powi(d as i32)
    }

    /// `theta^(eps |xi|)`.
    pub fn theta_hat(&self, d: usize, xi: f64) -> f64 {
        Self::theta_hat_unit(self.kind, d, self.epsilon * xi)
    }

    /// Unit-scale frequency beyond which `theta^ < level`.
    pub fn unit_cutoff(kind: MollifierKind, d: usize, level: f64) -> f64 {
        match kind {
            MollifierKind::Gaussian => ((1.0 / level).ln() / (2.0 * PI * PI)).sqrt(),
            MollifierKind::Fejer => {
                let (mut lo, mut hi) = (0.0, 1.0);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if lens(d, mid) > level {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi
            }
        }
    }

    /// Decay exponent `gamma` with `|theta(x)| <= C / (1 + |x|^{d + gamma})`.
    pub fn decay_gamma(&self) -> f64 {
        1.0
    }

    /// Recorded constant `C` of the decay bound at unit scale.
    pub fn decay_constant(kind: MollifierKind, d: usize) -> f64 {
        let mut c = 0.0f64;
        for i in 0..=20_000 {
            let r = i as f64 * 0.01;
            c = c.max(Self::theta_unit(kind, d, r) * (1.0 + r.powi(d as i32 + 1)));
        }
        match kind {
            MollifierKind::Gaussian => c,
            // Beyond the sampled range J_nu^2(z) <= 2/(pi z) bounds the envelope.
            MollifierKind::Fejer => {
                let tail = 0.5f64.powi(d as i32) * 2.0 / (PI * PI) / unit_diameter_ball_volume(d);
                c.max(tail * 1.0001)
            }
        }
    }
}

/// Spectral density of a kernel: `lambda2 * ln+^ + g^`, with a constant tail
/// of `g` carried as an atom at frequency 0.
#[derive(Debug, Clone)]
pub struct KernelSpectrum {
    pub dimension: usize,
    pub lambda2: f64,
    pub scale: f64,
    /// Constant part of `g`: a point mass of this weight at the origin.
    pub atom: f64,
    remainder: Option<Tabulated>,
    /// Worst quadrature error in the tabulated remainder transform.
    pub remainder_error: f64,
}

impl KernelSpectrum {
    /// Builds the spectrum, tabulating the remainder transform up to `xi_max`.
    pub fn new(spec: &KernelSpec, xi_max: f64) -> Result<Self> {
        if spec.dimension > 3 {
            return invalid("spectral synthesis requires d <= 3");
        }
        let atom = spec.remainder_tail();
        let (remainder, remainder_error) = match &spec.remainder {
            Remainder::Zero | Remainder::Constant { .. } => (None, 0.0),
            Remainder::Table { table } => {
                let table = table.clone();
                let extent = table.extent();
                let profile = spectral::FnProfile {
                    f: move |r: f64| table.eval(r) - atom,
                    support: extent,
                    kinks: Vec::new(),
                };
                let (t, e) = spectral::tabulate_transform(&profile, spec.dimension, xi_max)?;
                (Some(t), e)
            }
            Remainder::Cone => {
                let (l2, s, d) = (spec.lambda2, spec.scale, spec.dimension);
                let profile = spectral::FnProfile {
                    f: move |r: f64| cone_remainder(l2, s, d, r),
                    support: s,
                    kinks: Vec::new(),
                };
                let (t, e) = spectral::tabulate_transform(&profile, d, xi_max)?;
                (Some(t), e)
            }
        };
        Ok(Self {
            dimension: spec.dimension,
            lambda2: spec.lambda2,
            scale: spec.scale,
            atom,
            remainder,
            remainder_error,
        })
    }

    /// Density at `|xi|`, excluding the atom.
    pub fn eval(&self, xi: f64) -> f64 {
        let mut v = 0.0;
        if self.lambda2 > 0.0 {
            v += self.lambda2 * spectral::logplus_hat(self.dimension, xi, self.scale);
        }
        if let Some(t) = &self.remainder {
            v += t.eval(xi);
        }
        v
    }
}

/// Quadrature tolerance for mollified covariances.
pub const COVARIANCE_TOL: Tolerance = Tolerance {
    abs: 1e-10,
    rel: 1e-10,
    max_panels: 400_000,
};

/// `q_eps(r) = (theta^eps * f)(r)`, by inverse radial transform of
/// `f^(xi) theta^(eps xi)`. `q_eps(0)` is the exact field variance.
pub fn mollified_covariance(spec: &KernelSpec, moll: &MollifierSpec, r: f64) -> Result<QuadResult> {
    let spectrum = KernelSpectrum::new(spec, spectral_extent(spec, moll))?;
    mollified_covariance_with(&spectrum, moll, r)
}

fn spectral_extent(spec: &KernelSpec, moll: &MollifierSpec) -> f64 {
    let _ = spec;
    MollifierSpec::unit_cutoff(moll.kind, spec.dimension, 1e-18) / moll.epsilon
}

/// As [`mollified_covariance`], reusing a prepared spectrum.
pub fn mollified_covariance_with(
    spectrum: &KernelSpectrum,
    moll: &MollifierSpec,
    r: f64,
) -> Result<QuadResult> {
    if r < 0.0 {
        return invalid("radius must be nonnegative");
    }
    let d = spectrum.dimension;
    let cutoff = MollifierSpec::unit_cutoff(moll.kind, d, 1e-18) / moll.epsilon;
    let integrand = |xi: f64| {
        let w = if r == 0.0 {
            spectral::sphere_area(d) * xi.powi(d as i32 - 1)
        } else {
            spectral::hankel_kernel(d, r, xi)
        };
        w * spectrum.eval(xi) * moll.theta_hat(d, xi)
    };
    let breaks = covariance_breaks(spectrum.scale, r, moll.epsilon, cutoff);
    let body = integrate_panels(integrand, &breaks, COVARIANCE_TOL);
    if !body.converged {
        return Err(Error::Quadrature {
            value: body.value,
            error: body.error,
            tolerance: COVARIANCE_TOL.abs,
        });
    }
    // Truncation check on one extra stretch beyond the cutoff.
    let tail = integrate(integrand, cutoff, 2.0 * cutoff, COVARIANCE_TOL);
    if tail.value.abs() > COVARIANCE_TOL.abs {
        return Err(Error::Quadrature {
            value: body.value,
            error: tail.value.abs(),
            tolerance: COVARIANCE_TOL.abs,
        });
    }
    Ok(QuadResult {
        value: body.value + spectrum.atom,
        error: body.error + tail.value.abs(),
        converged: true,
    })
}

fn covariance_breaks(scale: f64, r: f64, eps: f64, cutoff: f64) -> Vec<f64> {
    let mut b = vec![0.0, cutoff];
    // Geometric panels follow the 1/xi decay of the log spectrum.
    let mut x = 1e-3 / scale;
    while x < cutoff {
        b.push(x);
        x *= 1.5;
    }
    // Oscillations of the kernel weight (period 1/r) and of the log spectrum (1/scale).
    let period = if r > 0.0 { (1.0 / r).min(1.0 / scale) } else { 1.0 / scale };
    let step = 0.5 * period;
    let n = (cutoff / step).ceil() as usize;
    if n < 2_000_000 {
        b.extend((1..n).map(|i| i as f64 * step));
    }
    let _ = eps;
    b.sort_by(f64::total_cmp);
    b.dedup();
    b
}

/// JSON model document: kernel plus mollifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dimension: usize,
    pub lambda2: f64,
    pub scale: f64,
    #[serde(default = "zero_remainder")]
    pub remainder: Remainder,
    pub mollifier: MollifierSpec,
}

fn zero_remainder() -> Remainder {
    Remainder::Zero
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: ModelSpec = serde_json::from_str(text)?;
        m.kernel()?;
        m.mollifier()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.dimension, self.lambda2, self.scale, self.remainder.clone())
    }

    pub fn mollifier(&self) -> Result<MollifierSpec> {
        MollifierSpec::new(self.mollifier.kind, self.mollifier.epsilon)
    }

    pub fn from_parts(kernel: &KernelSpec, moll: MollifierSpec) -> Self {
        Self {
            dimension: kernel.dimension,
            lambda2: kernel.lambda2,
            scale: kernel.scale,
            remainder: kernel.remainder.clone(),
            mollifier: moll,
        }
    }
}
