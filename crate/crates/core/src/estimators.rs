//! Monte Carlo estimators: structure functions, scale invariance,
//! degeneracy, mollifier independence, dissipation statistics and the
//! multifractal random walk.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaos::{
    block_masses, dissipation_samples, exponentiate, mrw_path, region_mass, safe_extent, ChaosMeasure,
    Region, REACH_FACTOR,
};
use crate::error::{invalid, Error, Result};
use crate::field::{synthesize, FieldStream, GridSpec, ShellLadder};
use crate::kernels::MollifierKind;
use crate::rng::{normal, Purpose, StreamKey};
use crate::stats::{jackknife, mean_se, ols};

/// Jackknife groups used throughout.
pub const JACKKNIFE_GROUPS: usize = 20;

/// Structure function `zeta_p = (d + lambda2/2) p - lambda2 p^2 / 2`.
pub fn zeta(p: f64, d: usize, lambda2: f64) -> f64 {
    (d as f64 + 0.5 * lambda2) * p - 0.5 * lambda2 * p * p
}

/// The root `p* = 2d / lambda2 > 1` of `zeta_p = d`.
pub fn p_star(d: usize, lambda2: f64) -> Result<f64> {
    let two_d = 2.0 * d as f64;
    if !(lambda2 > 0.0) {
        return Ok(f64::INFINITY);
    }
    if lambda2 >= two_d {
        return invalid(format!("no p* > 1 exists for lambda2 = {lambda2} >= 2d = {two_d}"));
    }
    Ok(two_d / lambda2)
}

/// Inputs needed to replay a Monte Carlo report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub replicas: u32,
    pub grid: GridSpec,
    pub ladder_digest: String,
    pub epsilons: Vec<f64>,
    pub mollifier: MollifierKind,
    pub dimension: usize,
    pub lambda2: f64,
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

impl Provenance {
    pub fn new(ladder: &ShellLadder, seed: u64, replicas: u32) -> Self {
        Self {
            seed,
            replicas,
            grid: ladder.grid.clone(),
            ladder_digest: ladder.digest().to_string(),
            epsilons: ladder.epsilons.clone(),
            mollifier: ladder.mollifier,
            dimension: ladder.kernel.dimension,
            lambda2: ladder.kernel.lambda2,
            scale: ladder.kernel.scale,
            config_digest: None,
        }
    }
}

fn finest_measure(ladder: &ShellLadder, stream: FieldStream) -> Result<ChaosMeasure> {
    Ok(exponentiate(&synthesize(ladder, ladder.finest(), stream)?))
}

fn check_replicas(replicas: u32, min: u32) -> Result<()> {
    if replicas < min {
        return invalid(format!("need at least {min} replicas, got {replicas}"));
    }
    Ok(())
}

// ---------------------------------------------------------------- moments

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentEstimator {
    /// Sample mean of `m(cube)^p`.
    Plain,
    /// Size-biased estimator for `p > 1`.
    Tilted,
    /// Sample mean of `m(ball)^p` for `p <= 0`.
    Ball,
}

/// One `(p, c)` sample moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentPoint {
    pub p: f64,
    pub c: f64,
    pub estimator: MomentEstimator,
    pub moment: f64,
    pub se: f64,
    /// Plain cube moment, reported alongside the tilted one.
    pub plain_moment: f64,
    pub plain_se: f64,
    /// Largest single-replica share of the sum or a relative SE above 0.2.
    pub heavy_tail: bool,
}

/// Fitted exponent for one `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaFit {
    pub p: f64,
    pub zeta_hat: f64,
    pub se: f64,
    pub ci: [f64; 2],
    pub zeta: f64,
    /// Log prefactor `ln(e^{p(p-1)g(0)/2} C_p)` at the integral scale.
    pub intercept: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub provenance: Provenance,
    pub epsilon: f64,
    pub p_star: f64,
    pub c_range: [f64; 2],
    pub points: Vec<MomentPoint>,
    pub fits: Vec<ZetaFit>,
    /// Second differences of the fitted exponents are nonpositive within 3 SE.
    pub concave: bool,
}

/// Smallest ratio `max(c) / min(c)` accepted for a regression.
pub const MIN_SCALE_SPAN: f64 = 16.0;

/// Sample moments `E[m([0,c]^d)^p]` over aligned cubes and their log-log slopes.
///
/// Every `c` must be a whole number `b` of grid cells with `b` dividing `n`,
/// and lie in `[8h, R/4]`. For `p > 1` the moment is estimated through
/// `E[m(I)^p] = |I|^k E[exp(sum_{a<b} C(J_a - J_b)) m_J(I)^{p-k}]` with
/// `k = ceil(p) - 1` uniform cells `J_a` in `I` and `m_J` the measure
/// tilted by `exp(sum_a C(. - J_a))`, where `C` is the discrete covariance.
pub fn moment_scaling(
    ladder: &ShellLadder,
    p_list: &[f64],
    c_list: &[f64],
    replicas: u32,
    seed: u64,
) -> Result<ScalingReport> {
    check_replicas(replicas, 2 * JACKKNIFE_GROUPS as u32)?;
    let g = &ladder.grid;
    let d = g.dimension;
    let h = g.step();
    let r = ladder.kernel.scale;
    let lambda2 = ladder.kernel.lambda2;
    let pstar = p_star(d, lambda2)?;
    if p_list.is_empty() {
        return invalid("no moment orders given");
    }
    for &p in p_list {
        if !p.is_finite() || p >= pstar {
            return invalid(format!("moment order {p} not below p* = {pstar}"));
        }
    }
    if c_list.len() < 4 {
        return invalid("regression needs at least 4 scales");
    }
    let mut blocks = Vec::with_capacity(c_list.len());
    for &c in c_list {
        if !(c >= 8.0 * h * (1.0 - 1e-12) && c <= 0.25 * r * (1.0 + 1e-12)) {
            return invalid(format!("scale {c} outside [8h, R/4] = [{}, {}]", 8.0 * h, 0.25 * r));
        }
        let b = (c / h).round();
        if (b * h - c).abs() > 1e-9 * c || !g.n.is_multiple_of(b as usize) {
            return invalid(format!("scale {c} is not a block of cells tiling the grid"));
        }
        blocks.push(b as usize);
    }
    let (cmin, cmax) = c_list
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &c| (a.min(c), b.max(c)));
    if cmax / cmin < MIN_SCALE_SPAN * (1.0 - 1e-12) {
        return invalid(format!("scales span a factor {} < {MIN_SCALE_SPAN}", cmax / cmin));
    }
    let level = ladder.finest();
    let tilt_table: Option<Vec<f64>> = p_list
        .iter()
        .any(|&p| p > 1.0)
        .then(|| ladder.covariance_cube(level).iter().map(|c| c.exp()).collect());

    // per_replica[r][ci][pi] = (estimate, plain)
    let per_replica: Vec<Vec<Vec<(f64, f64)>>> = (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let stream = FieldStream { seed, replica: rep };
            let m = finest_measure(ladder, stream)?;
            blocks
                .iter()
                .enumerate()
                .map(|(ci, &b)| {
                    let sums = block_masses(&m, b)?;
                    p_list
                        .iter()
                        .enumerate()
                        .map(|(pi, &p)| {
                            let plain = sums.iter().map(|s| s.powf(p)).sum::<f64>() / sums.len() as f64;
                            let est = if p > 1.0 {
                                let key = StreamKey::new(seed, rep, (ci * 64 + pi) as u16, Purpose::Tilt);
                                tilted_moment(&m, b, p, tilt_table.as_ref().unwrap(), key)
                            } else if p <= 0.0 && d > 1 {
                                ball_moment(&m, b, p)?
                            } else {
                                plain
                            };
                            Ok((est, plain))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut points = Vec::new();
    for (ci, &c) in c_list.iter().enumerate() {
        for (pi, &p) in p_list.iter().enumerate() {
            let est: Vec<f64> = per_replica.iter().map(|r| r[ci][pi].0).collect();
            let plain: Vec<f64> = per_replica.iter().map(|r| r[ci][pi].1).collect();
            let (moment, se) = mean_se(&est);
            let (plain_moment, plain_se) = mean_se(&plain);
            let total: f64 = est.iter().sum();
            let share = est.iter().fold(0.0f64, |a, v| a.max(*v)) / total;
            let estimator = if p > 1.0 {
                MomentEstimator::Tilted
            } else if p <= 0.0 && d > 1 {
                MomentEstimator::Ball
            } else {
                MomentEstimator::Plain
            };
            points.push(MomentPoint {
                p,
                c,
                estimator,
                moment,
                se,
                plain_moment,
                plain_se,
                heavy_tail: share > 0.05 || se / moment > 0.2 || !se.is_finite(),
            });
        }
    }

    let x: Vec<f64> = c_list.iter().map(|c| (c / r).ln()).collect();
    let mut fits = Vec::new();
    for (pi, &p) in p_list.iter().enumerate() {
        let fit_on = |idx: &[usize]| -> crate::stats::LineFit {
            let y: Vec<f64> = (0..c_list.len())
                .map(|ci| {
                    let s: f64 = idx.iter().map(|&r| per_replica[r][ci][pi].0).sum();
                    (s / idx.len() as f64).ln()
                })
                .collect();
            ols(&x, &y)
        };
        let (slope, se) = jackknife(replicas as usize, JACKKNIFE_GROUPS, |idx| fit_on(idx).slope);
        let full = fit_on(&(0..replicas as usize).collect::<Vec<_>>());
        let y: Vec<f64> = (0..c_list.len())
            .map(|ci| points[ci * p_list.len() + pi].moment.ln())
            .collect();
        let my = y.iter().sum::<f64>() / y.len() as f64;
        let tss: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
        let rss: f64 = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (b - full.intercept - full.slope * a).powi(2))
            .sum();
        fits.push(ZetaFit {
            p,
            zeta_hat: slope,
            se,
            ci: [slope - 1.96 * se, slope + 1.96 * se],
            zeta: zeta(p, d, lambda2),
            intercept: full.intercept,
            r2: if tss > 0.0 { 1.0 - rss / tss } else { 1.0 },
        });
    }
    let concave = concavity(&fits);
    Ok(ScalingReport {
        provenance: Provenance::new(ladder, seed, replicas),
        epsilon: ladder.epsilons[level],
        p_star: pstar,
        c_range: [cmin, cmax],
        points,
        fits,
        concave,
    })
}

fn concavity(fits: &[ZetaFit]) -> bool {
    let mut f: Vec<&ZetaFit> = fits.iter().collect();
    f.sort_by(|a, b| a.p.total_cmp(&b.p));
    f.windows(3).all(|w| {
        let s1 = (w[1].zeta_hat - w[0].zeta_hat) / (w[1].p - w[0].p);
        let s2 = (w[2].zeta_hat - w[1].zeta_hat) / (w[2].p - w[1].p);
        let noise = (w[0].se.powi(2) + 4.0 * w[1].se.powi(2) + w[2].se.powi(2)).sqrt()
            / (w[1].p - w[0].p).min(w[2].p - w[1].p);
        s2 - s1 <= 3.0 * noise
    })
}

/// Offsets of the cells of an aligned block from its first cell, with
/// their local multi-indices.
fn block_layout(n: usize, d: usize, b: usize) -> (Vec<usize>, Vec<[usize; 3]>) {
    let count = b.pow(d as u32);
    let mut offs = Vec::with_capacity(count);
    let mut local = Vec::with_capacity(count);
    for i in 0..count {
        let mut rem = i;
        let mut multi = [0usize; 3];
        for a in (0..d).rev() {
            multi[a] = rem % b;
            rem /= b;
        }
        offs.push((0..d).fold(0usize, |acc, a| acc * n + multi[a]));
        local.push(multi);
    }
    (offs, local)
}

fn block_origins(n: usize, d: usize, b: usize) -> Vec<usize> {
    let nb = n / b;
    (0..nb.pow(d as u32))
        .map(|i| {
            let mut rem = i;
            let mut multi = [0usize; 3];
            for a in (0..d).rev() {
                multi[a] = (rem % nb) * b;
                rem /= nb;
            }
            (0..d).fold(0usize, |acc, a| acc * n + multi[a])
        })
        .collect()
}

fn lag_index(n: usize, d: usize, x: &[usize; 3], y: &[usize; 3]) -> usize {
    (0..d).fold(0usize, |acc, a| acc * n + (x[a] + n - y[a]) % n)
}

/// Block average of the size-biased estimator of `m(block)^p`.
fn tilted_moment(m: &ChaosMeasure, b: usize, p: f64, exp_cov: &[f64], key: StreamKey) -> f64 {
    let g = &m.grid;
    let (n, d) = (g.n, g.dimension);
    let k = p.ceil() as usize - 1;
    let (offs, local) = block_layout(n, d, b);
    let origins = block_origins(n, d, b);
    let volume = offs.len() as f64 * g.cell_volume();
    let mut rng = key.rng();
    let mut tilt = vec![1.0f64; offs.len()];
    let mut total = 0.0;
    for &o in &origins {
        let js: Vec<usize> = (0..k).map(|_| rng.random_range(0..offs.len())).collect();
        let mut weight = 1.0;
        for a in 0..k {
            for bb in a + 1..k {
                weight *= exp_cov[lag_index(n, d, &local[js[a]], &local[js[bb]])];
            }
        }
        tilt.iter_mut().for_each(|t| *t = 1.0);
        for &j in &js {
            for (t, y) in tilt.iter_mut().zip(&local) {
                *t *= exp_cov[lag_index(n, d, y, &local[j])];
            }
        }
        let mj: f64 = offs.iter().zip(&tilt).map(|(&off, t)| m.masses[o + off] * t).sum();
        total += volume.powi(k as i32) * weight * mj.powf(p - k as f64);
    }
    total / origins.len() as f64
}

/// Average of `m(B(center, c/2))^p` over balls centered in aligned blocks.
fn ball_moment(m: &ChaosMeasure, b: usize, p: f64) -> Result<f64> {
    let g = &m.grid;
    let d = g.dimension;
    let h = g.step();
    let nb = g.n / b;
    let radius = 0.5 * b as f64 * h;
    let count = nb.pow(d as u32);
    let mut total = 0.0;
    for i in 0..count {
        let mut rem = i;
        let mut center = vec![0.0; d];
        for a in (0..d).rev() {
            center[a] = g.origin[a] + ((rem % nb) as f64 + 0.5) * b as f64 * h;
            rem /= nb;
        }
        total += region_mass(m, &Region::ball(&center, radius))?.powf(p);
    }
    Ok(total / count as f64)
}

impl ScalingReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "p,c,estimator,moment,se,plain_moment,plain_se,heavy_tail,zeta")?;
        let d = self.provenance.dimension;
        for pt in &self.points {
            writeln!(
                w,
                "{},{:e},{},{:e},{:e},{:e},{:e},{},{}",
                pt.p,
                pt.c,
                serde_json::to_value(pt.estimator)?.as_str().unwrap_or(""),
                pt.moment,
                pt.se,
                pt.plain_moment,
                pt.plain_se,
                pt.heavy_tail,
                zeta(pt.p, d, self.provenance.lambda2)
            )?;
        }
        Ok(())
    }
}

// ------------------------------------------------------- scale invariance

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleInvarianceReport {
    pub provenance: Provenance,
    pub c: f64,
    pub side: f64,
    pub placements: usize,
    /// Ladder levels of the small and large boxes.
    pub levels: [usize; 2],
    pub mean_shift: f64,
    pub mean_shift_se: f64,
    pub mean_shift_target: f64,
    pub variance_gain: f64,
    pub variance_gain_se: f64,
    pub variance_gain_target: f64,
    /// Same quantities with `m(A)` summed over every cell of `A`.
    pub mean_shift_full: f64,
    pub variance_gain_full: f64,
    pub ks_statistic: f64,
    pub ks_critical: f64,
    pub ks_rejected: bool,
    pub permutations: usize,
}

impl ScaleInvarianceReport {
    pub fn mean_ok(&self) -> bool {
        (self.mean_shift - self.mean_shift_target).abs() <= 3.0 * self.mean_shift_se
    }

    pub fn variance_ok(&self) -> bool {
        (self.variance_gain - self.variance_gain_target).abs() <= 3.0 * self.variance_gain_se
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "quantity,estimate,se,target")?;
        writeln!(w, "mean_shift,{:e},{:e},{:e}", self.mean_shift, self.mean_shift_se, self.mean_shift_target)?;
        writeln!(
            w,
            "variance_gain,{:e},{:e},{:e}",
            self.variance_gain, self.variance_gain_se, self.variance_gain_target
        )?;
        writeln!(w, "ks_statistic,{:e},,{:e}", self.ks_statistic, self.ks_critical)?;
        Ok(())
    }
}

/// Permutations used to calibrate the two-sample critical value.
pub const PERMUTATIONS: usize = 999;

/// Compares `ln m(cA)` with `ln m(A) + Omega_c` for cubes `A` of side `side`.
///
/// `m(cA)` is taken at the finest level and `m(A)` at the level whose scale
/// is `eps_finest / c`, so that both sides carry the same relative
/// regularization. Cubes are placed `side + R + 4 eps` apart, which makes
/// placements in one replica independent under the pure log kernel. Even
/// replicas give the `m(cA)` ensemble and odd ones the `m(A) + Omega`
/// ensemble for the two-sample test.
pub fn scale_invariance_test(
    ladder: &ShellLadder,
    c: f64,
    side: f64,
    replicas: u32,
    seed: u64,
) -> Result<ScaleInvarianceReport> {
    if !ladder.kernel.is_pure_log() {
        return invalid("scale invariance holds only for the pure log kernel (g = 0)");
    }
    if ladder.kernel.dimension > 3 {
        return invalid("scale invariance is tested in dimensions 1 to 3");
    }
    if !(c > 0.0 && c <= 1.0) {
        return invalid(format!("contraction factor {c} outside (0, 1]"));
    }
    check_replicas(replicas, 2 * JACKKNIFE_GROUPS as u32)?;
    let g = &ladder.grid;
    let d = g.dimension;
    let r = ladder.kernel.scale;
    let lambda2 = ladder.kernel.lambda2;
    let fine = ladder.finest();
    let target_eps = ladder.epsilons[fine] / c;
    let coarse = ladder
        .epsilons
        .iter()
        .position(|e| ((e / target_eps) - 1.0).abs() < 1e-9)
        .ok_or_else(|| {
            Error::Invalid(format!("ladder has no level at scale eps_finest / c = {target_eps:e}"))
        })?;
    let w = REACH_FACTOR * ladder.epsilons[coarse];
    let max_side = (r - w) / (d as f64).sqrt();
    if !(side > 0.0 && side <= max_side) {
        return invalid(format!("cube side {side} must lie in (0, {max_side}] to stay inside B(0, R)"));
    }
    if side > safe_extent(g, r, ladder.epsilons[coarse]) {
        return Err(Error::RegionOutsideInterior(format!("cube side {side}")));
    }
    let stride = (1.0 / c).round();
    if (stride * c - 1.0).abs() > 1e-9 {
        return invalid(format!("1/c = {} must be an integer", 1.0 / c));
    }
    let stride = stride as usize;
    let h = g.step();
    let spacing = side + r + w;
    let per_axis = (g.length / spacing).floor() as usize;
    if per_axis == 0 {
        return invalid("grid too small for one placement");
    }
    let placements = per_axis.pow(d as u32);
    let corners: Vec<Vec<f64>> = (0..placements)
        .map(|i| {
            let mut rem = i;
            let mut v = vec![0.0; d];
            for a in (0..d).rev() {
                // Corners sit on cell centers so that the contraction maps
                // cell centers of cA onto cell centers of A.
                let k = ((rem % per_axis) as f64 * spacing / h).round();
                v[a] = g.origin[a] + (k + 0.5) * h;
                rem /= per_axis;
            }
            v
        })
        .collect();
    let log_inv_c = (1.0 / c).ln();
    let omega_mean = -(d as f64 + 0.5 * lambda2) * log_inv_c;
    let omega_sd = (lambda2 * log_inv_c).sqrt();

    // rows[r][i] = (ln m(cA), ln m(A) at matched resolution, Omega, ln m(A))
    let rows: Vec<Vec<(f64, f64, f64, f64)>> = (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let stream = FieldStream { seed, replica: rep };
            let big = exponentiate(&synthesize(ladder, coarse, stream)?);
            let small = if coarse == fine {
                big.clone()
            } else {
                exponentiate(&synthesize(ladder, fine, stream)?)
            };
            let mut rng = StreamKey::new(seed, rep, 0, Purpose::Omega).rng();
            corners
                .iter()
                .map(|x0| {
                    let lc = region_mass(&small, &Region::cube(x0, c * side))?.ln();
                    let full = region_mass(&big, &Region::cube(x0, side))?.ln();
                    let la = matched_mass(&big, x0, c * side, stride)?.ln();
                    let om = omega_mean + omega_sd * normal(&mut rng);
                    Ok((lc, la, om, full))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    type Row = (f64, f64, f64, f64);
    let flat: Vec<Row> = rows.iter().flatten().copied().collect();
    let mean_of = |idx: &[usize], f: &dyn Fn(&Row) -> f64| -> f64 {
        idx.iter().map(|&i| f(&flat[i])).sum::<f64>() / idx.len() as f64
    };
    let var_of = |idx: &[usize], f: &dyn Fn(&Row) -> f64| -> f64 {
        let m = mean_of(idx, f);
        idx.iter().map(|&i| (f(&flat[i]) - m).powi(2)).sum::<f64>() / (idx.len() as f64 - 1.0)
    };
    let (mean_shift, mean_shift_se) = jackknife(flat.len(), JACKKNIFE_GROUPS, |idx| {
        mean_of(idx, &|t| t.0 - t.1)
    });
    let (variance_gain, variance_gain_se) = jackknife(flat.len(), JACKKNIFE_GROUPS, |idx| {
        var_of(idx, &|t| t.0) - var_of(idx, &|t| t.1)
    });
    let all: Vec<usize> = (0..flat.len()).collect();
    let mean_shift_full = mean_of(&all, &|t| t.0 - t.3);
    let variance_gain_full = var_of(&all, &|t| t.0) - var_of(&all, &|t| t.3);

    let mut s1 = Vec::new();
    let mut s2 = Vec::new();
    for (rep, row) in rows.iter().enumerate() {
        for t in row {
            if rep % 2 == 0 {
                s1.push(t.0);
            } else {
                s2.push(t.1 + t.2);
            }
        }
    }
    let ks = crate::stats::ks_statistic(&s1, &s2);
    let mut pooled: Vec<f64> = s1.iter().chain(&s2).copied().collect();
    let mut rng = StreamKey::new(seed, 0, 0, Purpose::Permutation).rng();
    let mut null = Vec::with_capacity(PERMUTATIONS);
    for _ in 0..PERMUTATIONS {
        pooled.shuffle(&mut rng);
        let (a, b) = pooled.split_at(s1.len());
        null.push(crate::stats::ks_statistic(a, b));
    }
    let ks_critical = crate::stats::quantile(&null, 0.99);

    Ok(ScaleInvarianceReport {
        provenance: Provenance::new(ladder, seed, replicas),
        c,
        side,
        placements,
        levels: [fine, coarse],
        mean_shift,
        mean_shift_se,
        mean_shift_target: omega_mean,
        variance_gain,
        variance_gain_se,
        variance_gain_target: lambda2 * log_inv_c,
        mean_shift_full,
        variance_gain_full,
        ks_statistic: ks,
        ks_critical,
        ks_rejected: ks > ks_critical,
        permutations: PERMUTATIONS,
    })
}

/// Mass of the cube `A = x0 + (cA - x0) / c` sampled only at the images of
/// the cell centers of `cA`, each carrying `stride^d` times its weight in `cA`.
/// With `x0` on a cell center these images are cell centers again.
fn matched_mass(m: &ChaosMeasure, x0: &[f64], small_side: f64, stride: usize) -> Result<f64> {
    let g = &m.grid;
    let d = g.dimension;
    let n = g.n;
    let h = g.step();
    let k: Vec<usize> = (0..d)
        .map(|a| (((x0[a] - g.origin[a]) / h - 0.5).round() as i64).rem_euclid(n as i64) as usize)
        .collect();
    let weights = crate::chaos::region_weights(g, &Region::cube(x0, small_side))?;
    let factor = stride.pow(d as u32) as f64;
    let mut total = 0.0;
    for (flat, w) in weights {
        let multi = g.unflatten(flat);
        let mut image = [0usize; 3];
        for a in 0..d {
            let delta = (multi[a] + n - k[a]) % n;
            image[a] = (k[a] + stride * delta) % n;
        }
        total += w * factor * m.masses[g.flatten(&image[..d])];
    }
    Ok(total)
}

// ------------------------------------------------------------- degeneracy

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegeneracyVerdict {
    /// Fractional moment decays with refinement.
    Degenerate,
    /// Fractional moment settles.
    Stable,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegeneracyRow {
    pub provenance: Provenance,
    pub alpha: f64,
    pub region: Region,
    pub epsilons: Vec<f64>,
    pub moments: Vec<f64>,
    pub se: Vec<f64>,
    /// Fitted `kappa` in `E[m_eps^alpha] ~ eps^kappa`; positive means decay.
    pub exponent: f64,
    pub exponent_se: f64,
    /// `d - zeta_alpha` above the threshold, 0 below it.
    pub predicted: f64,
    /// Largest relative change over the last two refinements.
    pub final_drift: f64,
    pub verdict: DegeneracyVerdict,
}

/// Plateau tolerance for the last two refinements.
pub const PLATEAU_DRIFT: f64 = 0.05;

/// Fractional moment `E[m_eps(region)^alpha]` along the whole ladder.
pub fn degeneracy_scan(
    ladder: &ShellLadder,
    region: &Region,
    alpha: f64,
    replicas: u32,
    seed: u64,
) -> Result<DegeneracyRow> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    if ladder.finest() < 3 {
        return invalid("degeneracy scan needs at least 4 ladder levels");
    }
    check_replicas(replicas, 2 * JACKKNIFE_GROUPS as u32)?;
    let d = ladder.grid.dimension;
    let lambda2 = ladder.kernel.lambda2;
    let traces: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let t = crate::chaos::replica_trace(ladder, region, FieldStream { seed, replica: rep })?;
            Ok(t.iter().map(|m| m.powf(alpha)).collect())
        })
        .collect::<Result<_>>()?;
    let levels = ladder.epsilons.len();
    let mut moments = Vec::with_capacity(levels);
    let mut se = Vec::with_capacity(levels);
    for k in 0..levels {
        let col: Vec<f64> = traces.iter().map(|t| t[k]).collect();
        let (m, s) = mean_se(&col);
        moments.push(m);
        se.push(s);
    }
    let x: Vec<f64> = ladder.epsilons.iter().map(|e| e.ln()).collect();
    let (exponent, exponent_se) = jackknife(traces.len(), JACKKNIFE_GROUPS, |idx| {
        let y: Vec<f64> = (0..levels)
            .map(|k| (idx.iter().map(|&i| traces[i][k]).sum::<f64>() / idx.len() as f64).ln())
            .collect();
        ols(&x, &y).slope
    });
    let last = levels - 1;
    let final_drift = ((moments[last] / moments[last - 1] - 1.0).abs())
        .max((moments[last - 1] / moments[last - 2] - 1.0).abs());
    let critical = 2.0 * d as f64;
    let predicted = if lambda2 > critical {
        d as f64 - zeta(alpha, d, lambda2)
    } else {
        0.0
    };
    let verdict = if exponent > 3.0 * exponent_se && final_drift >= PLATEAU_DRIFT {
        DegeneracyVerdict::Degenerate
    } else if final_drift < PLATEAU_DRIFT {
        DegeneracyVerdict::Stable
    } else {
        DegeneracyVerdict::Inconclusive
    };
    Ok(DegeneracyRow {
        provenance: Provenance::new(ladder, seed, replicas),
        alpha,
        region: region.clone(),
        epsilons: ladder.epsilons.clone(),
        moments,
        se,
        exponent,
        exponent_se,
        predicted,
        final_drift,
        verdict,
    })
}

pub fn write_degeneracy_csv<W: Write>(rows: &[DegeneracyRow], mut w: W) -> Result<()> {
    writeln!(w, "lambda2,alpha,epsilon,moment,se")?;
    for row in rows {
        for ((e, m), s) in row.epsilons.iter().zip(&row.moments).zip(&row.se) {
            writeln!(w, "{},{},{:e},{:e},{:e}", row.provenance.lambda2, row.alpha, e, m, s)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------- mollifier independence

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionalMoment {
    pub provenance: Provenance,
    pub alpha: f64,
    pub epsilon: f64,
    pub moment: f64,
    pub se: f64,
}

/// `E[m_eps(region)^alpha]` at the finest level over replicas `first..first + replicas`.
pub fn fractional_moment(
    ladder: &ShellLadder,
    region: &Region,
    alpha: f64,
    first: u32,
    replicas: u32,
    seed: u64,
) -> Result<FractionalMoment> {
    check_replicas(replicas, 2)?;
    let vals: Vec<f64> = (first..first + replicas)
        .into_par_iter()
        .map(|rep| {
            let m = finest_measure(ladder, FieldStream { seed, replica: rep })?;
            Ok(region_mass(&m, region)?.powf(alpha))
        })
        .collect::<Result<_>>()?;
    let (moment, se) = mean_se(&vals);
    Ok(FractionalMoment {
        provenance: Provenance::new(ladder, seed, replicas),
        alpha,
        epsilon: ladder.epsilons[ladder.finest()],
        moment,
        se,
    })
}

// ------------------------------------------------------------ dissipation

/// Statistics of `ln eps_l` at one radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipationLevel {
    pub l: f64,
    pub samples: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub log_variance: f64,
    pub log_variance_se: f64,
    pub skewness: f64,
    pub skewness_se: f64,
    pub excess_kurtosis: f64,
    pub excess_kurtosis_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LognormalityReport {
    pub provenance: Provenance,
    pub mean_dissipation: f64,
    pub levels: Vec<DissipationLevel>,
    /// Slope of `Var(ln eps_l)` against `ln(R / l)`.
    pub slope: f64,
    pub slope_se: f64,
    /// Intercept `A` of the same fit.
    pub intercept: f64,
}

/// Samples `eps_l` on a lattice of ball centers, `per_axis^3` per replica,
/// shifted by a uniform offset drawn per replica.
pub fn dissipation_run(
    ladder: &ShellLadder,
    radii: &[f64],
    mean_dissipation: f64,
    per_axis: usize,
    replicas: u32,
    seed: u64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let g = &ladder.grid;
    if g.dimension != 3 {
        return invalid("dissipation statistics need a three-dimensional grid");
    }
    if per_axis == 0 || radii.is_empty() {
        return invalid("need at least one radius and one center per axis");
    }
    (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let m = finest_measure(ladder, FieldStream { seed, replica: rep })?;
            let mut rng = StreamKey::new(seed, rep, 0, Purpose::Placement).rng();
            let shift: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * g.length).collect();
            let step = g.length / per_axis as f64;
            let centers: Vec<[f64; 3]> = (0..per_axis.pow(3))
                .map(|i| {
                    let idx = [i / (per_axis * per_axis), (i / per_axis) % per_axis, i % per_axis];
                    [0, 1, 2].map(|a| g.origin[a] + shift[a] + idx[a] as f64 * step)
                })
                .collect();
            radii
                .iter()
                .map(|&l| {
                    Ok(dissipation_samples(&m, &centers, l, mean_dissipation)?
                        .iter()
                        .map(|s| s.value)
                        .collect())
                })
                .collect()
        })
        .collect()
}

/// Fits `Var(ln eps_l) = slope ln(R/l) + A`; `samples[r][i]` holds the values of
/// replica `r` at radius `radii[i]`. Standard errors are jackknifed over replicas.
pub fn lognormality_report(
    provenance: Provenance,
    radii: &[f64],
    samples: &[Vec<Vec<f64>>],
    mean_dissipation: f64,
) -> Result<LognormalityReport> {
    if radii.len() < 2 {
        return invalid("need at least two radii");
    }
    check_replicas(samples.len() as u32, 2 * JACKKNIFE_GROUPS as u32)?;
    let r = provenance.scale;
    let reps = samples.len();
    let groups = JACKKNIFE_GROUPS;
    let values = |idx: &[usize], li: usize| -> Vec<f64> {
        idx.iter().flat_map(|&i| samples[i][li].iter().copied()).collect()
    };
    let logs = |idx: &[usize], li: usize| -> Vec<f64> {
        values(idx, li).iter().map(|v| v.ln()).collect()
    };
    let mut levels = Vec::new();
    for (li, &l) in radii.iter().enumerate() {
        let (mean, mean_se) = jackknife(reps, groups, |idx| {
            let v = values(idx, li);
            v.iter().sum::<f64>() / v.len() as f64
        });
        let (log_variance, log_variance_se) =
            jackknife(reps, groups, |idx| crate::stats::variance(&logs(idx, li)));
        let (skewness, skewness_se) = jackknife(reps, groups, |idx| crate::stats::skewness(&logs(idx, li)));
        let (excess_kurtosis, excess_kurtosis_se) =
            jackknife(reps, groups, |idx| crate::stats::excess_kurtosis(&logs(idx, li)));
        levels.push(DissipationLevel {
            l,
            samples: samples.iter().map(|s| s[li].len()).sum(),
            mean,
            mean_se,
            log_variance,
            log_variance_se,
            skewness,
            skewness_se,
            excess_kurtosis,
            excess_kurtosis_se,
        });
    }
    let x: Vec<f64> = radii.iter().map(|l| (r / l).ln()).collect();
    let fit_on = |idx: &[usize]| {
        let y: Vec<f64> = (0..radii.len())
            .map(|li| crate::stats::variance(&logs(idx, li)))
            .collect();
        ols(&x, &y)
    };
    let (slope, slope_se) = jackknife(reps, groups, |idx| fit_on(idx).slope);
    let intercept = fit_on(&(0..reps).collect::<Vec<_>>()).intercept;
    Ok(LognormalityReport {
        provenance,
        mean_dissipation,
        levels,
        slope,
        slope_se,
        intercept,
    })
}

impl LognormalityReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "l,samples,mean,mean_se,var_ln,var_ln_se,skewness,skewness_se,excess_kurtosis,excess_kurtosis_se")?;
        for v in &self.levels {
            writeln!(
                w,
                "{:e},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                v.l,
                v.samples,
                v.mean,
                v.mean_se,
                v.log_variance,
                v.log_variance_se,
                v.skewness,
                v.skewness_se,
                v.excess_kurtosis,
                v.excess_kurtosis_se
            )?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- MRW

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrwTime {
    pub t: f64,
    pub second_moment: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrwReport {
    pub provenance: Provenance,
    pub substeps: usize,
    pub times: Vec<MrwTime>,
    /// Partition steps used for the quadratic variation, coarse to fine.
    pub partition_steps: Vec<f64>,
    /// Largest `|QV / m[0, t_max] - 1|` over replicas, per partition.
    pub max_qv_error: Vec<f64>,
    /// Mean of the same relative error, per partition.
    pub mean_qv_error: Vec<f64>,
}

/// `E[X(t)^2]` for each `t` and quadratic variation of `X` on `[0, t_max]`
/// over partitions of step `4 dt`, `2 dt` and `dt` with `dt = h / substeps`.
pub fn mrw_report(
    ladder: &ShellLadder,
    times: &[f64],
    substeps: usize,
    replicas: u32,
    seed: u64,
) -> Result<MrwReport> {
    let g = &ladder.grid;
    if g.dimension != 1 {
        return invalid("multifractal random walk needs a one-dimensional grid");
    }
    if times.is_empty() || times.iter().any(|t| !(*t > 0.0)) || substeps == 0 {
        return invalid("need positive times and at least one substep");
    }
    check_replicas(replicas, 2)?;
    let dt = g.step() / substeps as f64;
    let t_max = times.iter().fold(0.0f64, |a, &b| a.max(b));
    let count = (t_max / dt).round() as usize;
    if !count.is_multiple_of(4) {
        return invalid("t_max must be a multiple of 4 partition steps");
    }
    let grid_t: Vec<f64> = (1..=count).map(|i| i as f64 * dt).collect();
    let marks: Vec<usize> = times
        .iter()
        .map(|&t| ((t / dt).round() as usize).max(1) - 1)
        .collect();
    let per: Vec<(Vec<f64>, Vec<f64>)> = (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let stream = FieldStream { seed, replica: rep };
            let m = finest_measure(ladder, stream)?;
            let path = mrw_path(&m, &grid_t, stream)?;
            let total = *path.mass.last().unwrap();
            let x2 = marks.iter().map(|&i| path.x[i].powi(2)).collect();
            let errs = [4, 2, 1]
                .iter()
                .map(|&s| (path.quadratic_variation(count - 1, s) / total - 1.0).abs())
                .collect();
            Ok((x2, errs))
        })
        .collect::<Result<_>>()?;
    let times_out = times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let col: Vec<f64> = per.iter().map(|p| p.0[i]).collect();
            let (m, s) = mean_se(&col);
            MrwTime {
                t,
                second_moment: m,
                se: s,
            }
        })
        .collect();
    let max_qv_error = (0..3)
        .map(|j| per.iter().fold(0.0f64, |a, p| a.max(p.1[j])))
        .collect();
    let mean_qv_error = (0..3)
        .map(|j| per.iter().map(|p| p.1[j]).sum::<f64>() / per.len() as f64)
        .collect();
    Ok(MrwReport {
        provenance: Provenance::new(ladder, seed, replicas),
        substeps,
        times: times_out,
        partition_steps: vec![4.0 * dt, 2.0 * dt, dt],
        max_qv_error,
        mean_qv_error,
    })
}

impl MrwReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,second_moment,se")?;
        for t in &self.times {
            writeln!(w, "{:e},{:e},{:e}", t.t, t.second_moment, t.se)?;
        }
        Ok(())
    }
}
