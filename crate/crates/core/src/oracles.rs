//! Brute-force validators for the Gaussian interpolation and comparison
//! inequalities, the sup-moment growth bound and the log-convolution tail limit.
//!
//! Instances are tiny, so tensor Gauss–Hermite quadrature (or plain Monte
//! Carlo for suprema) is authoritative. Every check reports its error budget
//! and only returns a pass or fail when the margin exceeds that budget.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kernels::{unit_diameter_ball_volume, MollifierKind, MollifierSpec};
use crate::quadrature::{integrate_panels, normal_rule, Tolerance};
use crate::rng::{fill_normal, normal, uniform, Purpose, StreamKey};
use crate::special::normal_sf;
use crate::stats::{mean_se, ols};

/// Smallest Gauss–Hermite order accepted per dimension.
pub const MIN_ORDER: usize = 40;
/// Largest vector handled by tensor quadrature.
pub const MAX_QUADRATURE_SIZE: usize = 3;
/// Largest vector handled by the supremum comparison.
pub const MAX_SUP_SIZE: usize = 4;
/// Paired samples required before a Monte Carlo verdict is issued.
pub const MIN_MC_SAMPLES: u64 = 1_000_000;
/// Largest vector accepted by the JSON decoder.
pub const MAX_VECTOR_SIZE: usize = 64;
/// Confidence multiplier for Monte Carlo margins.
pub const MC_Z: f64 = 3.0;

const EIGEN_FLOOR: f64 = -1e-12;

/// Outcome of one oracle check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

/// Covariance and positive weights of a centered Gaussian vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianVectorSpec {
    pub covariance: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl GaussianVectorSpec {
    pub fn new(covariance: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let s = Self { covariance, weights };
        s.validate()?;
        Ok(s)
    }

    /// Unit weights.
    pub fn with_unit_weights(covariance: Vec<Vec<f64>>) -> Result<Self> {
        let n = covariance.len();
        Self::new(covariance, vec![1.0; n])
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    pub fn size(&self) -> usize {
        self.covariance.len()
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.covariance[i][j]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.size();
        if n == 0 || n > MAX_VECTOR_SIZE {
            return invalid(format!("vector size must lie in 1..={MAX_VECTOR_SIZE}, got {n}"));
        }
        if self.covariance.iter().any(|row| row.len() != n) {
            return invalid("covariance must be square");
        }
        if self.covariance.iter().flatten().any(|v| !v.is_finite()) {
            return invalid("covariance entries must be finite");
        }
        let scale = self.covariance.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            for j in 0..i {
                if (self.cov(i, j) - self.cov(j, i)).abs() > 1e-12 * scale {
                    return invalid(format!("covariance not symmetric at ({i}, {j})"));
                }
            }
        }
        if self.weights.len() != n {
            return invalid("one weight per component required");
        }
        if self.weights.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return invalid("weights must be positive");
        }
        let low = eigenvalues(&self.covariance).into_iter().fold(f64::INFINITY, f64::min);
        if low < EIGEN_FLOOR {
            return invalid(format!("covariance not positive semidefinite: eigenvalue {low:e}"));
        }
        Ok(())
    }

    /// Row-major `L` with `L L^T = covariance`.
    pub fn factor(&self) -> Vec<f64> {
        factor(&self.covariance)
    }
}

fn matrix(c: &[Vec<f64>]) -> DMatrix<f64> {
    let n = c.len();
    DMatrix::from_fn(n, n, |i, j| 0.5 * (c[i][j] + c[j][i]))
}

fn eigenvalues(c: &[Vec<f64>]) -> Vec<f64> {
    SymmetricEigen::new(matrix(c)).eigenvalues.iter().copied().collect()
}

fn factor(c: &[Vec<f64>]) -> Vec<f64> {
    let n = c.len();
    let e = SymmetricEigen::new(matrix(c));
    let mut l = vec![0.0; n * n];
    for k in 0..n {
        let s = e.eigenvalues[k].max(0.0).sqrt();
        for i in 0..n {
            l[i * n + k] = e.eigenvectors[(i, k)] * s;
        }
    }
    l
}

fn blend(x: &GaussianVectorSpec, y: &GaussianVectorSpec, t: f64) -> Vec<Vec<f64>> {
    let n = x.size();
    (0..n)
        .map(|i| (0..n).map(|j| t * x.cov(i, j) + (1.0 - t) * y.cov(i, j)).collect())
        .collect()
}

/// Quadrature value with the magnitude of the summed terms, for roundoff.
#[derive(Debug, Clone, Copy)]
struct Sum {
    value: f64,
    magnitude: f64,
}

/// `E[g(X)]` for `X ~ N(0, C)` with `C = L L^T`, tensor rule of `order` nodes.
fn tensor_expectation(l: &[f64], n: usize, order: usize, g: &dyn Fn(&[f64]) -> f64) -> Sum {
    let (nodes, weights) = normal_rule(order);
    let mut idx = vec![0usize; n];
    let mut z = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut value = 0.0;
    let mut magnitude = 0.0;
    loop {
        let mut w = 1.0;
        for a in 0..n {
            z[a] = nodes[idx[a]];
            w *= weights[idx[a]];
        }
        for i in 0..n {
            x[i] = (0..n).map(|k| l[i * n + k] * z[k]).sum();
        }
        let v = w * g(&x);
        value += v;
        magnitude += v.abs();
        let mut a = n;
        loop {
            if a == 0 {
                return Sum { value, magnitude };
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < order {
                break;
            }
            idx[a] = 0;
        }
    }
}

/// Lower order used to estimate the quadrature error of `order`.
fn companion_order(order: usize) -> usize {
    (3 * order / 4).max(2)
}

fn check_order(order: usize) -> Result<()> {
    if order < MIN_ORDER {
        return invalid(format!("quadrature order must be at least {MIN_ORDER}"));
    }
    if order > 200 {
        return invalid("quadrature order above 200 is not supported");
    }
    Ok(())
}

fn check_pair(x: &GaussianVectorSpec, y: &GaussianVectorSpec, max: usize) -> Result<usize> {
    x.validate()?;
    y.validate()?;
    let n = x.size();
    if y.size() != n {
        return invalid("vectors must have the same size");
    }
    if n > max {
        return invalid(format!("vector size {n} exceeds {max} for this oracle"));
    }
    Ok(n)
}

/// Smooth test function of the interpolation formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// `u^alpha` on `u > 0`.
    Power { alpha: f64 },
    /// `exp(-u)`.
    NegExp,
}

impl TestFunction {
    fn validate(self) -> Result<()> {
        match self {
            Self::Power { alpha } if !(alpha.is_finite() && alpha > 0.0) => invalid("power must be positive"),
            _ => Ok(()),
        }
    }

    pub fn value(self, u: f64) -> f64 {
        match self {
            Self::Power { alpha } => u.powf(alpha),
            Self::NegExp => (-u).exp(),
        }
    }

    pub fn second(self, u: f64) -> f64 {
        match self {
            Self::Power { alpha } => alpha * (alpha - 1.0) * u.powf(alpha - 2.0),
            Self::NegExp => (-u).exp(),
        }
    }
}

fn weighted_sum(p: &[f64], var: &[f64], x: &[f64], e: &mut [f64]) -> f64 {
    let mut w = 0.0;
    for i in 0..x.len() {
        e[i] = (x[i] - 0.5 * var[i]).exp();
        w += p[i] * e[i];
    }
    w
}

/// Both sides of the interpolation derivative formula at one `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationCheck {
    pub t: f64,
    pub order: usize,
    pub step: f64,
    /// Central difference of the interpolated expectation.
    pub left: f64,
    /// Quadrature of the covariance-weighted second-derivative sum.
    pub right: f64,
    pub residual: f64,
    pub quadrature_error: f64,
    pub truncation_error: f64,
    pub roundoff: f64,
    pub budget: f64,
    pub status: Status,
}

/// Interpolated expectation `E[phi(W_t)]` at quadrature `order`.
fn interpolated(x: &GaussianVectorSpec, y: &GaussianVectorSpec, phi: TestFunction, t: f64, order: usize) -> Sum {
    let c = blend(x, y, t);
    let n = c.len();
    let var: Vec<f64> = (0..n).map(|i| c[i][i]).collect();
    let l = factor(&c);
    let p = &x.weights;
    tensor_expectation(&l, n, order, &|z: &[f64]| {
        let mut e = [0.0; MAX_QUADRATURE_SIZE];
        phi.value(weighted_sum(p, &var, z, &mut e[..n]))
    })
}

fn derivative_formula(x: &GaussianVectorSpec, y: &GaussianVectorSpec, phi: TestFunction, t: f64, order: usize) -> Sum {
    let c = blend(x, y, t);
    let n = c.len();
    let var: Vec<f64> = (0..n).map(|i| c[i][i]).collect();
    let l = factor(&c);
    let p = &x.weights;
    tensor_expectation(&l, n, order, &|z: &[f64]| {
        let mut e = [0.0; MAX_QUADRATURE_SIZE];
        let w = weighted_sum(p, &var, z, &mut e[..n]);
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += p[i] * p[j] * (x.cov(i, j) - y.cov(i, j)) * e[i] * e[j];
            }
        }
        0.5 * phi.second(w) * s
    })
}

/// Evaluates both sides of the interpolation derivative formula. The left
/// side is a central difference of tensor Gauss–Hermite expectations, the
/// right side the same quadrature applied to the formula. The budget adds
/// the quadrature error (against a lower order), the difference truncation
/// error (against a doubled step) and summation roundoff.
pub fn interpolation_derivative_check(
    x: &GaussianVectorSpec,
    y: &GaussianVectorSpec,
    phi: TestFunction,
    t: f64,
    order: usize,
) -> Result<InterpolationCheck> {
    check_pair(x, y, MAX_QUADRATURE_SIZE)?;
    phi.validate()?;
    check_order(order)?;
    if x.weights != y.weights {
        return invalid("both vectors must carry the same weights");
    }
    if !(t > 0.0 && t < 1.0) {
        return invalid("interpolation time must lie in (0, 1)");
    }
    let step = (1e-3f64).min(t.min(1.0 - t) / 4.0);
    let low = companion_order(order);
    let diff = |h: f64, q: usize| {
        let a = interpolated(x, y, phi, t + h, q);
        let b = interpolated(x, y, phi, t - h, q);
        ((a.value - b.value) / (2.0 * h), (a.magnitude + b.magnitude) / (2.0 * h))
    };
    let (left, mag) = diff(step, order);
    let (left_low, _) = diff(step, low);
    let (left_wide, _) = diff(2.0 * step, order);
    let r = derivative_formula(x, y, phi, t, order);
    let r_low = derivative_formula(x, y, phi, t, low);
    let quadrature_error = (left - left_low).abs() + (r.value - r_low.value).abs();
    let truncation_error = (left_wide - left).abs() / 3.0;
    let roundoff = 8.0 * f64::EPSILON * (mag + r.magnitude);
    let budget = 2.0 * (quadrature_error + truncation_error + roundoff);
    let residual = (left - r.value).abs();
    let status = if quadrature_error > 1e-6 * (1.0 + r.value.abs()) {
        Status::Inconclusive
    } else if residual <= budget {
        Status::Pass
    } else {
        Status::Fail
    };
    Ok(InterpolationCheck {
        t,
        order,
        step,
        left,
        right: r.value,
        residual,
        quadrature_error,
        truncation_error,
        roundoff,
        budget,
        status,
    })
}

/// Convex function of the comparison inequality for weighted lognormal sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexFunction {
    Square,
    /// `max(u - strike, 0)`.
    Call { strike: f64 },
    /// `u^exponent` with `exponent >= 1`.
    Power { exponent: f64 },
}

impl ConvexFunction {
    fn validate(self) -> Result<()> {
        match self {
            Self::Call { strike } if !strike.is_finite() => invalid("strike must be finite"),
            Self::Power { exponent } if !(exponent.is_finite() && exponent >= 1.0) => {
                invalid("convex power needs exponent >= 1")
            }
            _ => Ok(()),
        }
    }

    pub fn value(self, u: f64) -> f64 {
        match self {
            Self::Square => u * u,
            Self::Call { strike } => (u - strike).max(0.0),
            Self::Power { exponent } => u.powf(exponent),
        }
    }
}

/// Both expectations of a comparison inequality `left <= right`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCheck {
    pub method: String,
    pub left: f64,
    pub right: f64,
    /// `right - left`; positive when the inequality holds.
    pub margin: f64,
    pub budget: f64,
    pub status: Status,
}

fn verdict(margin: f64, budget: f64) -> Status {
    if !(margin.is_finite() && budget.is_finite()) {
        Status::Inconclusive
    } else if margin > budget {
        Status::Pass
    } else if margin < -budget {
        Status::Fail
    } else {
        Status::Inconclusive
    }
}

fn lognormal_sum_expectation(s: &GaussianVectorSpec, f: ConvexFunction, order: usize) -> (f64, f64, f64) {
    let n = s.size();
    let var: Vec<f64> = (0..n).map(|i| s.cov(i, i)).collect();
    let l = s.factor();
    let g = |z: &[f64]| {
        let mut e = [0.0; MAX_QUADRATURE_SIZE];
        f.value(weighted_sum(&s.weights, &var, z, &mut e[..n]))
    };
    let hi = tensor_expectation(&l, n, order, &g);
    let lo = tensor_expectation(&l, n, companion_order(order), &g);
    (hi.value, (hi.value - lo.value).abs(), hi.magnitude)
}

/// Checks `E[F(sum p_i e^{X_i - E[X_i^2]/2})] <= E[F(sum p_i e^{Y_i - E[Y_i^2]/2})]`
/// for entrywise dominated covariances.
pub fn convex_comparison_check(
    x: &GaussianVectorSpec,
    y: &GaussianVectorSpec,
    f: ConvexFunction,
    order: usize,
) -> Result<ComparisonCheck> {
    let n = check_pair(x, y, MAX_QUADRATURE_SIZE)?;
    f.validate()?;
    check_order(order)?;
    if x.weights != y.weights {
        return invalid("both vectors must carry the same weights");
    }
    for i in 0..n {
        for j in 0..n {
            if x.cov(i, j) > y.cov(i, j) + 1e-12 {
                return invalid(format!("covariance of X exceeds that of Y at ({i}, {j})"));
            }
        }
    }
    let (left, el, ml) = lognormal_sum_expectation(x, f, order);
    let (right, er, mr) = lognormal_sum_expectation(y, f, order);
    let margin = right - left;
    let budget = 2.0 * (el + er) + 8.0 * f64::EPSILON * (ml + mr);
    Ok(ComparisonCheck {
        method: format!("gauss-hermite order {order}"),
        left,
        right,
        margin,
        budget,
        status: verdict(margin, budget),
    })
}

/// Increasing function applied to a supremum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IncreasingFunction {
    Identity,
    PositivePart,
    /// Logistic step `1 / (1 + exp(-(u - threshold) / width))`.
    Step { threshold: f64, width: f64 },
}

impl IncreasingFunction {
    fn validate(self) -> Result<()> {
        match self {
            Self::Step { threshold, width } if !(threshold.is_finite() && width.is_finite() && width > 0.0) => {
                invalid("step needs a finite threshold and positive width")
            }
            _ => Ok(()),
        }
    }

    pub fn value(self, u: f64) -> f64 {
        match self {
            Self::Identity => u,
            Self::PositivePart => u.max(0.0),
            Self::Step { threshold, width } => 1.0 / (1.0 + (-(u - threshold) / width).exp()),
        }
    }
}

/// `E[max(X_1, X_2)]` for a centered pair.
pub fn expected_max_pair(var1: f64, var2: f64, cov: f64) -> f64 {
    ((var1 + var2 - 2.0 * cov).max(0.0) / (2.0 * PI)).sqrt()
}

/// Checks `E[F(sup Y)] <= E[F(sup X)]` when the variances agree and the
/// off-diagonal covariances of `X` are dominated by those of `Y`. Pairs with
/// the identity use the closed form, everything else paired Monte Carlo
/// from the oracle stream `(seed, instance)`.
pub fn sup_comparison_check(
    x: &GaussianVectorSpec,
    y: &GaussianVectorSpec,
    f: IncreasingFunction,
    samples: u64,
    seed: u64,
    instance: u32,
) -> Result<ComparisonCheck> {
    let n = check_pair(x, y, MAX_SUP_SIZE)?;
    f.validate()?;
    for i in 0..n {
        let scale = x.cov(i, i).abs().max(1.0);
        if (x.cov(i, i) - y.cov(i, i)).abs() > 1e-12 * scale {
            return invalid(format!("variances differ at component {i}"));
        }
        for j in 0..n {
            if i != j && x.cov(i, j) > y.cov(i, j) + 1e-12 {
                return invalid(format!("covariance of X exceeds that of Y at ({i}, {j})"));
            }
        }
    }
    if n == 2 && f == IncreasingFunction::Identity {
        let left = expected_max_pair(y.cov(0, 0), y.cov(1, 1), y.cov(0, 1));
        let right = expected_max_pair(x.cov(0, 0), x.cov(1, 1), x.cov(0, 1));
        let margin = right - left;
        let budget = 16.0 * f64::EPSILON * right.abs().max(1.0);
        return Ok(ComparisonCheck {
            method: "closed form".into(),
            left,
            right,
            margin,
            budget,
            status: verdict(margin, budget),
        });
    }
    if samples < MIN_MC_SAMPLES {
        return Ok(ComparisonCheck {
            method: format!("monte carlo budget {samples} below {MIN_MC_SAMPLES}"),
            left: f64::NAN,
            right: f64::NAN,
            margin: f64::NAN,
            budget: f64::NAN,
            status: Status::Inconclusive,
        });
    }
    let lx = x.factor();
    let ly = y.factor();
    let mut rng = StreamKey::new(seed, instance, 0, Purpose::Oracle).rng();
    let mut z = [0.0; MAX_SUP_SIZE];
    let mut diffs = Vec::with_capacity(samples as usize);
    let (mut sx, mut sy) = (0.0, 0.0);
    for _ in 0..samples {
        fill_normal(&mut rng, &mut z[..n]);
        let sup = |l: &[f64]| {
            (0..n)
                .map(|i| (0..n).map(|k| l[i * n + k] * z[k]).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let a = f.value(sup(&lx));
        let b = f.value(sup(&ly));
        sx += a;
        sy += b;
        diffs.push(a - b);
    }
    let (margin, se) = mean_se(&diffs);
    let budget = MC_Z * se;
    Ok(ComparisonCheck {
        method: format!("paired monte carlo, {samples} samples"),
        left: sy / samples as f64,
        right: sx / samples as f64,
        margin,
        budget,
        status: verdict(margin, budget),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthPoint {
    pub n: u64,
    pub expectation: f64,
    pub error: f64,
}

/// Growth of `E[sup_i exp(p X_i - p lambda2 ln(n) / 2)]` for `n` iid
/// centered Gaussians of variance `lambda2 ln n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub lambda2: f64,
    pub p: f64,
    pub points: Vec<GrowthPoint>,
    /// Fitted exponent of the expectation in `n`.
    pub exponent: f64,
    pub exponent_se: f64,
    /// `exponent / p`.
    pub x_hat: f64,
    /// `(exponent + 3 se) / p`.
    pub x_upper: f64,
    /// Large-`n` exponent from a Laplace evaluation of the supremum law.
    pub predicted_exponent: f64,
    /// `p` within 5% of its admissible bound.
    pub near_boundary: bool,
    pub status: Status,
}

/// Exact expectation through `E[g(M)] = int g'(u) P(M > u) du` with
/// `P(M <= u) = Phi(u/s)^n`, integrated adaptively.
fn sup_expectation(n: u64, lambda2: f64, p: f64) -> Result<(f64, f64)> {
    let ln_n = (n as f64).ln();
    let s = (lambda2 * ln_n).sqrt();
    let shift = 0.5 * p * lambda2 * ln_n;
    let ps = p * s;
    let nf = n as f64;
    let log_tail = |z: f64| {
        let ln_cdf = if z >= 0.0 {
            (-normal_sf(z)).ln_1p()
        } else {
            normal_sf(-z).ln()
        };
        let q = -(nf * ln_cdf).exp_m1();
        q.ln()
    };
    let f = |z: f64| {
        let lt = log_tail(z);
        if lt == f64::NEG_INFINITY {
            0.0
        } else {
            (ps.ln() + ps * z - shift + lt).exp()
        }
    };
    let lo = -40.0 / ps - 40.0;
    let hi = ps + 40.0;
    let mut breaks = vec![lo, 0.0, ps.max(1.0), hi];
    breaks.dedup();
    let r = integrate_panels(f, &breaks, Tolerance::new(0.0, 1e-11));
    let v = r.require(1e-11)?;
    // The integral below `lo` is at most exp(ps lo - shift).
    Ok((v, r.error + (ps * lo - shift).exp()))
}

/// Fits the growth exponent of the supremum moment over `ns` and certifies
/// `exponent / p < 1`. Expectations come from one-dimensional quadrature of
/// the exact supremum law, so the only uncertainty is the fit itself.
pub fn sup_moment_growth(ns: &[u64], lambda2: f64, p: f64) -> Result<GrowthReport> {
    if !(lambda2.is_finite() && lambda2 > 0.0) || (lambda2 - 2.0).abs() < 1e-12 {
        return invalid("lambda2 must be positive and different from 2");
    }
    let bound = (2.0 / lambda2).max(1.0);
    if !(p.is_finite() && p > 0.0 && p < bound) {
        return invalid(format!("p must lie in (0, {bound})"));
    }
    let mut sorted = ns.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() < 3 || sorted[0] < 2 || *sorted.last().unwrap() > 1 << 30 {
        return invalid("need at least three distinct sizes in [2, 2^30]");
    }
    let mut points = Vec::with_capacity(sorted.len());
    for &n in &sorted {
        let (expectation, error) = sup_expectation(n, lambda2, p)?;
        points.push(GrowthPoint { n, expectation, error });
    }
    let xs: Vec<f64> = points.iter().map(|g| (g.n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|g| g.expectation.ln()).collect();
    let fit = ols(&xs, &ys);
    let lambda = lambda2.sqrt();
    let predicted_exponent = if p * lambda <= 2f64.sqrt() {
        p * (2f64.sqrt() * lambda - 0.5 * lambda2)
    } else {
        1.0 + 0.5 * (p * p - p) * lambda2
    };
    let x_hat = fit.slope / p;
    let x_upper = (fit.slope + 3.0 * fit.slope_se) / p;
    let x_lower = (fit.slope - 3.0 * fit.slope_se) / p;
    let status = if x_upper < 1.0 {
        Status::Pass
    } else if x_lower >= 1.0 {
        Status::Fail
    } else {
        Status::Inconclusive
    };
    Ok(GrowthReport {
        lambda2,
        p,
        points,
        exponent: fit.slope,
        exponent_se: fit.slope_se,
        x_hat,
        x_upper,
        predicted_exponent,
        near_boundary: p >= 0.95 * bound,
        status,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub a: f64,
    /// Largest `|I(z)|` over the checked `|z| > a`.
    pub sup: f64,
    pub argmax: f64,
    pub error: f64,
    /// `sup / (ln a / a^kappa)` with the envelope exponent `kappa`.
    pub envelope_ratio: f64,
}

/// Tail of `I(z) = int |theta(v)| ln|z / (z - v)| dv` for a unit mollifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub kind: MollifierKind,
    pub dimension: usize,
    pub decay_constant: f64,
    pub decay_gamma: f64,
    /// `kappa = d/2 + gamma/2 - d/4` of the envelope `C ln|z| / |z|^kappa`.
    pub envelope_exponent: f64,
    pub points: Vec<TailPoint>,
    pub decreasing: bool,
    pub within_envelope: bool,
    pub status: Status,
}

/// Points per decade and decades of the `|z|` grid scanned beyond each `a`.
const TAIL_PER_DECADE: usize = 8;
const TAIL_DECADES: usize = 3;
/// Exact quadrature below this radius and within this distance of `|z|`;
/// beyond, the oscillating Fejér profile is replaced by its mean envelope.
const FEJER_CORE: f64 = 200.0;
const FEJER_WINDOW: f64 = 50.0;

fn sphere_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / statrs::function::gamma::gamma(d as f64 / 2.0)
}

/// `ln rho` minus the mean of `ln|z - v|` over the sphere `|v| = r`, `|z| = rho`.
fn log_kernel(d: usize, r: f64, rho: f64) -> f64 {
    match d {
        1 => rho.ln() - 0.5 * (rho - r).abs().ln() - 0.5 * (rho + r).ln(),
        2 => (rho / r.max(rho)).ln(),
        _ => {
            let (a, b) = if r > rho { (r, rho) } else { (rho, r) };
            let x = b / a;
            let mean = if x < 0.1 {
                let x2 = x * x;
                let mut term = x2;
                let mut s = 0.0;
                let mut k = 2.0f64;
                while k <= 20.0 {
                    s += term / (k * (k * k - 1.0));
                    term *= x2;
                    k += 2.0;
                }
                a.ln() + s
            } else {
                ((a + b).powi(2) * (a + b).ln() - (a - b).powi(2) * (a - b).ln()) / (4.0 * a * b) - 0.5
            };
            rho.ln() - mean
        }
    }
}

/// Non-oscillating mean of the Fejér profile at large `r`.
fn fejer_mean(d: usize, r: f64) -> f64 {
    let nu = d as f64 / 2.0;
    let x = PI * r;
    let correction = 1.0 + (4.0 * nu * nu - 1.0) / (8.0 * x * x);
    0.5f64.powi(d as i32) / (PI * x * r.powi(d as i32)) * correction / unit_diameter_ball_volume(d)
}

/// Nearest point at or above `r` where the oscillating part of the Fejér
/// profile, `cos(2 pi r - (nu + 1/2) pi)`, has a vanishing antiderivative.
fn fejer_node(d: usize, r: f64) -> f64 {
    let shift = d as f64 / 2.0 + 0.5;
    ((2.0 * r - shift).ceil() + shift) / 2.0
}

fn tail_integral(kind: MollifierKind, d: usize, rho: f64) -> Result<(f64, f64)> {
    let area = sphere_area(d);
    let tol = Tolerance::new(1e-15, 1e-9);
    let exact = |r: f64| {
        if r <= 0.0 {
            return 0.0;
        }
        MollifierSpec::theta_unit(kind, d, r) * area * r.powi(d as i32 - 1) * log_kernel(d, r, rho)
    };
    match kind {
        MollifierKind::Gaussian => {
            let top = 40.0f64;
            let mut breaks = vec![0.0];
            if rho < top {
                breaks.push(rho);
            }
            breaks.push(top);
            let q = integrate_panels(exact, &breaks, tol);
            q.require(tol.rel)?;
            Ok((q.value, q.error))
        }
        MollifierKind::Fejer => {
            let mean = |r: f64| fejer_mean(d, r) * area * r.powi(d as i32 - 1) * log_kernel(d, r, rho);
            // Exact pieces: the core [0, FEJER_CORE] and a window around rho.
            let mut exact_parts: Vec<(f64, f64)> = vec![(0.0, fejer_node(d, FEJER_CORE))];
            let (w0, w1) = (fejer_node(d, (rho - FEJER_WINDOW).max(0.0)), fejer_node(d, rho + FEJER_WINDOW));
            if w0 <= exact_parts[0].1 {
                exact_parts[0].1 = w1.max(exact_parts[0].1);
            } else {
                exact_parts.push((w0, w1));
            }
            let mut value = 0.0;
            let mut error = 0.0;
            for &(a, b) in &exact_parts {
                // Unit panels follow the oscillation; rho is a log singularity in d = 1.
                let mut breaks: Vec<f64> = (0..).map(|k| a + k as f64).take_while(|&e| e < b).collect();
                if rho > a && rho < b {
                    breaks.push(rho);
                }
                breaks.push(b);
                breaks.sort_by(f64::total_cmp);
                breaks.dedup();
                let q = integrate_panels(exact, &breaks, tol);
                q.require(tol.rel)?;
                value += q.value;
                error += q.error;
            }
            // Mean-envelope pieces: the gap between the exact parts and the tail.
            let mut gaps = Vec::new();
            if exact_parts.len() == 2 {
                gaps.push((exact_parts[0].1, exact_parts[1].0));
            }
            let last = exact_parts.last().unwrap().1;
            for &(a, b) in &gaps {
                let q = integrate_panels(mean, &[a, (a * b).sqrt(), b], tol);
                q.require(tol.rel)?;
                value += q.value;
                error += q.error;
            }
            // [last, inf) with r = last / u.
            let tail = |u: f64| {
                if u <= 0.0 {
                    return 0.0;
                }
                let r = last / u;
                mean(r) * last / (u * u)
            };
            let q = integrate_panels(tail, &[0.0, 1e-6, 1e-3, 1.0], tol);
            q.require(tol.rel)?;
            value += q.value;
            error += q.error;
            // Switch points sit where the oscillation's antiderivative
            // vanishes, so dropping it costs about |mean'(b)| / (4 pi^2) each.
            let mut edges = vec![last];
            for &(a, b) in &gaps {
                edges.push(a);
                edges.push(b);
            }
            error += edges
                .iter()
                .map(|&b| {
                    let h = 1e-3 * b;
                    2.0 * ((mean(b + h) - mean(b - h)) / (2.0 * h)).abs() / (4.0 * PI * PI)
                })
                .sum::<f64>();
            Ok((value, error))
        }
    }
}

/// Evaluates `sup_{|z| > a} |I(z)|` for each `a` on a geometric `|z|` grid
/// spanning three decades and checks the decrease toward zero against the
/// quadrature errors and the decay envelope.
pub fn log_convolution_tail(kind: MollifierKind, d: usize, a_grid: &[f64]) -> Result<TailReport> {
    if !(1..=3).contains(&d) {
        return invalid("log-convolution tail is checked in dimensions 1 to 3");
    }
    if a_grid.len() < 2
        || a_grid.iter().any(|a| !(a.is_finite() && *a > 1.0 && *a <= 1e6))
        || a_grid.windows(2).any(|w| w[1] <= w[0])
    {
        return invalid("need at least two increasing thresholds in (1, 1e6]");
    }
    let gamma = 1.0;
    let kappa = d as f64 / 2.0 + gamma / 2.0 - d as f64 / 4.0;
    let mut points = Vec::with_capacity(a_grid.len());
    for &a in a_grid {
        let mut best = (0.0f64, a, 0.0f64);
        for k in 0..=TAIL_PER_DECADE * TAIL_DECADES {
            let rho = a * 10f64.powf(k as f64 / TAIL_PER_DECADE as f64);
            let (v, e) = tail_integral(kind, d, rho)?;
            if v.abs() > best.0 {
                best = (v.abs(), rho, e);
            }
        }
        points.push(TailPoint {
            a,
            sup: best.0,
            argmax: best.1,
            error: best.2,
            envelope_ratio: best.0 / (a.ln() / a.powf(kappa)),
        });
    }
    let decreasing = points.windows(2).all(|w| w[1].sup + w[1].error < w[0].sup - w[0].error);
    let increasing = points.windows(2).any(|w| w[1].sup - w[1].error > w[0].sup + w[0].error);
    let first = points[0].envelope_ratio;
    let within_envelope = points.iter().all(|p| p.envelope_ratio <= first * (1.0 + 1e-9));
    let status = if decreasing && within_envelope {
        Status::Pass
    } else if increasing {
        Status::Fail
    } else {
        Status::Inconclusive
    };
    Ok(TailReport {
        kind,
        dimension: d,
        decay_constant: MollifierSpec::decay_constant(kind, d),
        decay_gamma: gamma,
        envelope_exponent: kappa,
        points,
        decreasing,
        within_envelope,
        status,
    })
}

/// Work limits of the oracle suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub quadrature_order: usize,
    pub mc_samples: u64,
    /// Randomized instances per comparison oracle.
    pub instances: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            quadrature_order: MIN_ORDER,
            mc_samples: MIN_MC_SAMPLES,
            instances: 20,
        }
    }
}

/// One line of the oracle report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub oracle: String,
    pub instance: String,
    pub status: Status,
    pub margin: f64,
    pub budget: f64,
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub seed: u64,
    pub budget: Budget,
    pub passed: usize,
    pub failed: usize,
    pub inconclusive: usize,
    pub verdicts: Vec<Verdict>,
}

impl OracleReport {
    fn new(seed: u64, budget: Budget, verdicts: Vec<Verdict>) -> Self {
        let count = |s: Status| verdicts.iter().filter(|v| v.status == s).count();
        Self {
            seed,
            budget,
            passed: count(Status::Pass),
            failed: count(Status::Fail),
            inconclusive: count(Status::Inconclusive),
            verdicts,
        }
    }

    pub fn of(&self, oracle: &str) -> impl Iterator<Item = &Verdict> {
        let oracle = oracle.to_string();
        self.verdicts.iter().filter(move |v| v.oracle == oracle)
    }
}

fn random_spd<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<Vec<f64>> {
    let a: Vec<f64> = (0..n * n).map(|_| scale * normal(rng)).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let s: f64 = (0..n).map(|k| a[i * n + k] * a[j * n + k]).sum();
                    s + if i == j { 0.05 } else { 0.0 }
                })
                .collect()
        })
        .collect()
}

fn between<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform(rng)
}

/// Random pair with `X <= Y` entrywise: `Y = X + b b^T + diag(c)` with
/// positive `b` and nonnegative `c`.
pub fn random_convex_pair<R: Rng>(rng: &mut R, n: usize) -> (GaussianVectorSpec, GaussianVectorSpec) {
    let x = random_spd(rng, n, 0.5);
    let b: Vec<f64> = (0..n).map(|_| between(rng, 0.2, 0.6)).collect();
    let c: Vec<f64> = (0..n).map(|_| between(rng, 0.0, 0.2)).collect();
    let y = (0..n)
        .map(|i| (0..n).map(|j| x[i][j] + b[i] * b[j] + if i == j { c[i] } else { 0.0 }).collect())
        .collect();
    let p: Vec<f64> = (0..n).map(|_| between(rng, 0.2, 1.0)).collect();
    (
        GaussianVectorSpec::new(x, p.clone()).expect("valid by construction"),
        GaussianVectorSpec::new(y, p).expect("valid by construction"),
    )
}

/// Random pair with equal variances and `X_ij <= Y_ij` off the diagonal:
/// `Y = (1 - s) X + s sigma sigma^T`.
pub fn random_sup_pair<R: Rng>(rng: &mut R, n: usize) -> (GaussianVectorSpec, GaussianVectorSpec) {
    let x = random_spd(rng, n, 0.6);
    let s = between(rng, 0.3, 0.9);
    let sd: Vec<f64> = (0..n).map(|i| x[i][i].sqrt()).collect();
    let y = (0..n)
        .map(|i| (0..n).map(|j| if i == j { x[i][i] } else { (1.0 - s) * x[i][j] + s * sd[i] * sd[j] }).collect())
        .collect();
    (
        GaussianVectorSpec::with_unit_weights(x).expect("valid by construction"),
        GaussianVectorSpec::with_unit_weights(y).expect("valid by construction"),
    )
}

fn detail<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("report serializes")
}

fn pair(var: f64, rho: f64) -> Vec<Vec<f64>> {
    vec![vec![var, rho], vec![rho, var]]
}

/// Runs every oracle at the given budget. Randomized instances draw from
/// the oracle stream of `seed`, so the report is a pure function of its
/// arguments.
pub fn run_suite(seed: u64, budget: Budget) -> Result<OracleReport> {
    let order = budget.quadrature_order;
    check_order(order)?;
    let mut out = Vec::new();

    let mut interp = |name: String, x: &GaussianVectorSpec, y: &GaussianVectorSpec, phi, t| -> Result<()> {
        let c = interpolation_derivative_check(x, y, phi, t, order)?;
        out.push(Verdict {
            oracle: "interpolation_derivative".into(),
            instance: name,
            status: c.status,
            margin: c.budget - c.residual,
            budget: c.budget,
            detail: detail(&c),
        });
        Ok(())
    };
    let one_a = GaussianVectorSpec::with_unit_weights(vec![vec![0.8]])?;
    let one_b = GaussianVectorSpec::with_unit_weights(vec![vec![0.3]])?;
    interp("n=1 square".into(), &one_a, &one_b, TestFunction::Power { alpha: 2.0 }, 0.3)?;
    let lo = GaussianVectorSpec::with_unit_weights(pair(0.5, 0.1))?;
    let hi = GaussianVectorSpec::with_unit_weights(pair(0.5, 0.4))?;
    for t in [0.25, 0.5, 0.75] {
        interp(format!("n=2 power 0.4 t={t}"), &lo, &hi, TestFunction::Power { alpha: 0.4 }, t)?;
    }
    interp("n=2 identical".into(), &lo, &lo, TestFunction::Power { alpha: 0.4 }, 0.5)?;
    let mut rng = StreamKey::new(seed, 0, 1, Purpose::Oracle).rng();
    let (x3, y3) = random_convex_pair(&mut rng, 3);
    interp("n=3 exp(-u)".into(), &x3, &y3, TestFunction::NegExp, 0.5)?;
    interp("n=3 power 0.7".into(), &y3, &x3, TestFunction::Power { alpha: 0.7 }, 0.4)?;

    let fs = [
        ConvexFunction::Square,
        ConvexFunction::Power { exponent: 1.5 },
        ConvexFunction::Call { strike: 0.0 },
    ];
    for k in 0..budget.instances {
        let mut rng = StreamKey::new(seed, k as u32, 2, Purpose::Oracle).rng();
        let n = 1 + k % MAX_QUADRATURE_SIZE;
        let (x, y) = random_convex_pair(&mut rng, n);
        let f = match fs[k % fs.len()] {
            ConvexFunction::Call { .. } => ConvexFunction::Call {
                strike: x.weights.iter().sum(),
            },
            f => f,
        };
        let c = convex_comparison_check(&x, &y, f, order)?;
        out.push(Verdict {
            oracle: "convex_comparison".into(),
            instance: format!("random {k} n={n} {f:?}"),
            status: c.status,
            margin: c.margin,
            budget: c.budget,
            detail: serde_json::json!({ "x": x, "y": y, "function": f, "check": c }),
        });
    }

    let gs = [
        IncreasingFunction::PositivePart,
        IncreasingFunction::Step {
            threshold: 0.5,
            width: 0.2,
        },
    ];
    let iid = GaussianVectorSpec::with_unit_weights(pair(1.0, 0.0))?;
    let same = GaussianVectorSpec::with_unit_weights(pair(1.0, 1.0))?;
    let c = sup_comparison_check(&iid, &same, IncreasingFunction::Identity, budget.mc_samples, seed, 0)?;
    out.push(Verdict {
        oracle: "sup_comparison".into(),
        instance: "n=2 independent vs identical".into(),
        status: c.status,
        margin: c.margin,
        budget: c.budget,
        detail: detail(&c),
    });
    for k in 0..budget.instances {
        let mut rng = StreamKey::new(seed, k as u32, 3, Purpose::Oracle).rng();
        let n = 2 + k % (MAX_SUP_SIZE - 1);
        let (x, y) = random_sup_pair(&mut rng, n);
        let g = gs[k % gs.len()];
        let c = sup_comparison_check(&x, &y, g, budget.mc_samples, seed, 1 + k as u32)?;
        out.push(Verdict {
            oracle: "sup_comparison".into(),
            instance: format!("random {k} n={n} {g:?}"),
            status: c.status,
            margin: c.margin,
            budget: c.budget,
            detail: serde_json::json!({ "x": x, "y": y, "function": g, "check": c }),
        });
    }

    let ns: Vec<u64> = (4..=16).map(|k| 1u64 << k).collect();
    for (lambda2, p) in [(1.0, 1.5), (4.0, 0.9)] {
        let g = sup_moment_growth(&ns, lambda2, p)?;
        out.push(Verdict {
            oracle: "sup_moment_growth".into(),
            instance: format!("lambda2={lambda2} p={p}"),
            status: g.status,
            margin: 1.0 - g.x_upper,
            budget: 3.0 * g.exponent_se / p,
            detail: detail(&g),
        });
    }

    for kind in [MollifierKind::Gaussian, MollifierKind::Fejer] {
        let t = log_convolution_tail(kind, 1, &[10.0, 100.0, 1000.0])?;
        let margin = t
            .points
            .windows(2)
            .map(|w| (w[0].sup - w[0].error) - (w[1].sup + w[1].error))
            .fold(f64::INFINITY, f64::min);
        out.push(Verdict {
            oracle: "log_convolution_tail".into(),
            instance: format!("{kind:?} d=1"),
            status: t.status,
            margin,
            budget: t.points.iter().map(|p| p.error).fold(0.0, f64::max),
            detail: detail(&t),
        });
    }
    Ok(OracleReport::new(seed, budget, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> GaussianVectorSpec {
        GaussianVectorSpec::with_unit_weights(vec![vec![v]]).unwrap()
    }

    #[test]
    fn rejects_bad_covariances() {
        assert!(GaussianVectorSpec::with_unit_weights(vec![vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
        assert!(GaussianVectorSpec::with_unit_weights(vec![vec![1.0, 0.5], vec![0.4, 1.0]]).is_err());
        assert!(GaussianVectorSpec::new(vec![vec![1.0]], vec![0.0]).is_err());
        assert!(GaussianVectorSpec::from_json(r#"{"covariance":[[1,0],[0,1]],"weights":[1,1]}"#).is_ok());
        assert!(GaussianVectorSpec::from_json(r#"{"covariance":[[1,0]],"weights":[1]}"#).is_err());
        // Singular but PSD is fine.
        assert!(GaussianVectorSpec::with_unit_weights(pair(1.0, 1.0)).is_ok());
    }

    #[test]
    fn quadratic_interpolation_matches_hand_derivative() {
        let (a, b, t) = (0.8, 0.3, 0.3);
        let c = interpolation_derivative_check(&one(a), &one(b), TestFunction::Power { alpha: 2.0 }, t, 40).unwrap();
        let exact = (a - b) * (t * a + (1.0 - t) * b).exp();
        assert!((c.right - exact).abs() < 1e-12, "{} vs {exact}", c.right);
        assert!((c.left - exact).abs() < 1e-6);
        assert_eq!(c.status, Status::Pass);
    }

    #[test]
    fn identical_vectors_give_zero_derivative() {
        let x = GaussianVectorSpec::with_unit_weights(pair(0.5, 0.2)).unwrap();
        let c = interpolation_derivative_check(&x, &x, TestFunction::NegExp, 0.5, 40).unwrap();
        assert_eq!(c.right, 0.0);
        assert!(c.left.abs() < 1e-12);
        assert_eq!(c.status, Status::Pass);
    }

    #[test]
    fn residual_shrinks_with_the_step_squared() {
        // Truncation of the central difference is the dominant error term.
        let lo = GaussianVectorSpec::with_unit_weights(pair(0.5, 0.1)).unwrap();
        let hi = GaussianVectorSpec::with_unit_weights(pair(0.5, 0.4)).unwrap();
        let c = interpolation_derivative_check(&lo, &hi, TestFunction::Power { alpha: 0.4 }, 0.5, 40).unwrap();
        assert!(c.truncation_error > 10.0 * c.quadrature_error);
        let wide = interpolated(&lo, &hi, TestFunction::Power { alpha: 0.4 }, 0.5 + 2e-3, 40).value
            - interpolated(&lo, &hi, TestFunction::Power { alpha: 0.4 }, 0.5 - 2e-3, 40).value;
        let r2 = (wide / 4e-3 - c.right).abs();
        let ratio = r2 / c.residual;
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn second_moment_comparison_closed_form() {
        let x = GaussianVectorSpec::new(pair(0.6, 0.0), vec![0.3, 0.7]).unwrap();
        let y = GaussianVectorSpec::new(pair(0.6, 0.5), vec![0.3, 0.7]).unwrap();
        let c = convex_comparison_check(&x, &y, ConvexFunction::Square, 40).unwrap();
        let (p1, p2, s) = (0.3f64, 0.7f64, 0.6f64.exp());
        let left = p1 * p1 * s + p2 * p2 * s + 2.0 * p1 * p2;
        let right = p1 * p1 * s + p2 * p2 * s + 2.0 * p1 * p2 * 0.5f64.exp();
        assert!((c.left - left).abs() < 1e-12 && (c.right - right).abs() < 1e-12);
        assert_eq!(c.status, Status::Pass);
        let same = convex_comparison_check(&x, &x, ConvexFunction::Square, 40).unwrap();
        assert_eq!(same.margin, 0.0);
        assert_eq!(same.status, Status::Inconclusive);
        assert!(convex_comparison_check(&y, &x, ConvexFunction::Square, 40).is_err());
    }

    #[test]
    fn max_of_pair_closed_form() {
        let iid = GaussianVectorSpec::with_unit_weights(pair(2.0, 0.0)).unwrap();
        let same = GaussianVectorSpec::with_unit_weights(pair(2.0, 2.0)).unwrap();
        let c = sup_comparison_check(&iid, &same, IncreasingFunction::Identity, 0, 1, 0).unwrap();
        assert!((c.right - (2.0 / PI).sqrt()).abs() < 1e-15);
        assert_eq!(c.left, 0.0);
        assert_eq!(c.status, Status::Pass);
    }

    #[test]
    fn monte_carlo_matches_closed_form_and_respects_budget() {
        let x = GaussianVectorSpec::with_unit_weights(pair(1.0, 0.2)).unwrap();
        let y = GaussianVectorSpec::with_unit_weights(pair(1.0, 0.7)).unwrap();
        let c = sup_comparison_check(&x, &y, IncreasingFunction::PositivePart, MIN_MC_SAMPLES, 3, 0).unwrap();
        assert_eq!(c.status, Status::Pass);
        let starved = sup_comparison_check(&x, &y, IncreasingFunction::PositivePart, 0, 3, 0).unwrap();
        assert_eq!(starved.status, Status::Inconclusive);
        // Identity through Monte Carlo by reshuffling to n = 3 with a copy.
        let x3 = GaussianVectorSpec::with_unit_weights(vec![
            vec![1.0, 0.2, 1.0],
            vec![0.2, 1.0, 0.2],
            vec![1.0, 0.2, 1.0],
        ])
        .unwrap();
        let y3 = GaussianVectorSpec::with_unit_weights(vec![
            vec![1.0, 0.7, 1.0],
            vec![0.7, 1.0, 0.7],
            vec![1.0, 0.7, 1.0],
        ])
        .unwrap();
        let m = sup_comparison_check(&x3, &y3, IncreasingFunction::Identity, MIN_MC_SAMPLES, 3, 1).unwrap();
        let exact = expected_max_pair(1.0, 1.0, 0.2) - expected_max_pair(1.0, 1.0, 0.7);
        assert!((m.margin - exact).abs() < 4.0 * m.budget / MC_Z, "{} vs {exact}", m.margin);
    }

    #[test]
    fn growth_expectation_small_n_by_direct_sum() {
        // n = 2: E[exp(p max(X1, X2))] = 2 E[exp(p X) Phi(X / s)].
        let (lambda2, p, n) = (1.0, 1.5, 2u64);
        let s = (lambda2 * (n as f64).ln()).sqrt();
        let (x, w) = normal_rule(120);
        let direct: f64 = x
            .iter()
            .zip(&w)
            .map(|(z, w)| 2.0 * w * (p * s * z).exp() * (1.0 - normal_sf(*z)))
            .sum::<f64>()
            * (-0.5 * p * lambda2 * (n as f64).ln()).exp();
        let (v, _) = sup_expectation(n, lambda2, p).unwrap();
        assert!((v / direct - 1.0).abs() < 1e-9, "{v} vs {direct}");
    }

    #[test]
    fn growth_exponent_below_p() {
        let ns: Vec<u64> = (4..=16).map(|k| 1u64 << k).collect();
        for (l2, p) in [(1.0, 1.5), (4.0, 0.9)] {
            let g = sup_moment_growth(&ns, l2, p).unwrap();
            assert_eq!(g.status, Status::Pass, "{g:?}");
            assert!(g.exponent < p);
        }
        let small = sup_moment_growth(&ns, 1.0, 1e-3).unwrap();
        assert!(small.exponent.abs() < 2e-3);
        assert!(sup_moment_growth(&ns, 2.0, 0.5).is_err());
        assert!(sup_moment_growth(&ns, 1.0, 2.0).is_err());
    }

    #[test]
    fn log_kernel_series_matches_closed_form() {
        for (r, rho) in [(0.09f64, 1.0f64), (1.0, 0.09), (3.0, 40.0)] {
            let (a, b) = if r > rho { (r, rho) } else { (rho, r) };
            let closed = ((a + b).powi(2) * (a + b).ln() - (a - b).powi(2) * (a - b).ln()) / (4.0 * a * b) - 0.5;
            assert!((rho.ln() - closed - log_kernel(3, r, rho)).abs() < 1e-12);
        }
        // Harmonic mean value property in the plane.
        assert_eq!(log_kernel(2, 0.5, 2.0), 0.0);
    }

    #[test]
    fn gaussian_tail_decays_like_inverse_square() {
        // In d = 1, I(z) ~ E[V^2] / (2 z^2) for large z.
        let (v, _) = tail_integral(MollifierKind::Gaussian, 1, 100.0).unwrap();
        assert!((v * 2e4 - 1.0).abs() < 1e-3, "{v}");
        let t = log_convolution_tail(MollifierKind::Gaussian, 1, &[10.0, 100.0]).unwrap();
        assert_eq!(t.status, Status::Pass);
    }

    #[test]
    fn fejer_envelope_split_matches_brute_force() {
        // In d = 1 the Fejér profile is sin^2(pi r) / (pi r)^2; integrate it
        // directly over unit panels far past rho.
        let rho = 37.3;
        let f = |r: f64| {
            let s = (PI * r).sin() / (PI * r);
            2.0 * s * s * log_kernel(1, r, rho)
        };
        let mut breaks: Vec<f64> = (0..=20_000).map(|k| k as f64).collect();
        breaks.push(rho);
        breaks.sort_by(f64::total_cmp);
        let mut tol = Tolerance::new(1e-16, 1e-11);
        tol.max_panels = 1_000_000;
        let q = integrate_panels(f, &breaks, tol);
        assert!(q.converged);
        // Past 20000 the mean envelope is exact to far below the tolerance.
        let tail = |u: f64| {
            let r = 20_000.0 / u.max(1e-300);
            ((PI * PI * r * r).recip() * log_kernel(1, r, rho)) * 20_000.0 / (u * u).max(1e-300)
        };
        let t = integrate_panels(tail, &[0.0, 1e-6, 1e-3, 1.0], tol);
        let reference = q.value + t.value;
        let (v, e) = tail_integral(MollifierKind::Fejer, 1, rho).unwrap();
        assert!((v - reference).abs() <= e, "{v} vs {reference} (budget {e:e})");
    }

    #[test]
    fn fejer_tail_decreases() {
        let t = log_convolution_tail(MollifierKind::Fejer, 1, &[10.0, 100.0, 1000.0]).unwrap();
        assert_eq!(t.status, Status::Pass, "{t:?}");
        let t = log_convolution_tail(MollifierKind::Gaussian, 3, &[10.0, 100.0]).unwrap();
        assert_eq!(t.status, Status::Pass, "{t:?}");
    }
}
