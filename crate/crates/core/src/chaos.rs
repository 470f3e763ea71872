//! Chaos measures `m_eps(dx) = exp(X_eps(x) - E[X_eps^2]/2) dx` on grid cells,
//! region masses, convergence along the shell ladder, multifractal random
//! walks and dissipation variables.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dump::{DumpHeader, GridDump, GridKind, FORMAT, VERSION};
use crate::error::{invalid, Error, Result};
use crate::field::{refine, synthesize, FieldSample, FieldStream, GridSpec, ShellLadder};
use crate::rng::{normal, Purpose, StreamKey};

/// Interior margin in units of `eps`: one mollification width.
pub const WIDTH_FACTOR: f64 = 1.0;
/// Reach of the mollifier tails in units of `eps`.
pub const REACH_FACTOR: f64 = 4.0;

/// Cell masses of `m_eps` on a periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosMeasure {
    pub grid: GridSpec,
    pub epsilon: f64,
    pub level: usize,
    pub masses: Vec<f64>,
    pub variance: f64,
    pub scale: f64,
    pub stream: FieldStream,
    pub ladder_digest: String,
}

/// Midpoint exponentiation with the exact discrete variance.
pub fn exponentiate(sample: &FieldSample) -> ChaosMeasure {
    let vol = sample.grid.cell_volume();
    let shift = 0.5 * sample.variance;
    ChaosMeasure {
        grid: sample.grid.clone(),
        epsilon: sample.epsilon,
        level: sample.level,
        masses: sample.values.iter().map(|x| (x - shift).exp() * vol).collect(),
        variance: sample.variance,
        scale: sample.scale,
        stream: sample.stream,
        ladder_digest: sample.ladder_digest.clone(),
    }
}

/// Largest region extent kept clear of wrap-around correlations:
/// `L - 2R - 2 eps`.
pub fn safe_extent(grid: &GridSpec, scale: f64, epsilon: f64) -> f64 {
    grid.length - 2.0 * scale - 2.0 * WIDTH_FACTOR * epsilon
}

/// Region of the torus; coordinates may exceed the grid and wrap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Region {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// The whole periodic grid.
    Full,
}

impl Region {
    pub fn cube(lo: &[f64], side: f64) -> Self {
        Region::Box {
            lo: lo.to_vec(),
            hi: lo.iter().map(|v| v + side).collect(),
        }
    }

    pub fn ball(center: &[f64], radius: f64) -> Self {
        Region::Ball {
            center: center.to_vec(),
            radius,
        }
    }

    fn extent(&self) -> f64 {
        match self {
            Region::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| b - a)
                .fold(0.0, f64::max),
            Region::Ball { radius, .. } => 2.0 * radius,
            Region::Full => 0.0,
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        match self {
            Region::Box { lo, hi } => {
                if lo.len() != d || hi.len() != d {
                    return invalid("box corners must have one coordinate per dimension");
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && b > a)) {
                    return invalid("box must satisfy lo < hi on every axis");
                }
            }
            Region::Ball { center, radius } => {
                if center.len() != d || center.iter().any(|c| !c.is_finite()) {
                    return invalid("ball center must have one finite coordinate per dimension");
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return invalid("ball radius must be positive");
                }
            }
            Region::Full => {}
        }
        Ok(())
    }
}

/// Cells covered by a region with their covered volume fractions.
pub fn region_weights(grid: &GridSpec, region: &Region) -> Result<Vec<(usize, f64)>> {
    let d = grid.dimension;
    region.validate(d)?;
    let n = grid.n as i64;
    let h = grid.step();
    match region {
        Region::Full => Ok((0..grid.cells()).map(|i| (i, 1.0)).collect()),
        Region::Box { lo, hi } => {
            let axes: Vec<Vec<(usize, f64)>> = (0..d)
                .map(|a| {
                    let u = (lo[a] - grid.origin[a]) / h;
                    let v = (hi[a] - grid.origin[a]) / h;
                    let first = u.floor() as i64;
                    let last = v.ceil() as i64;
                    (first..last)
                        .filter_map(|i| {
                            let w = (v.min((i + 1) as f64) - u.max(i as f64)).max(0.0);
                            (w > 0.0).then(|| (i.rem_euclid(n) as usize, w))
                        })
                        .collect()
                })
                .collect();
            let mut out = Vec::new();
            tensor(&axes, d, 0, 0, 1.0, grid.n, &mut out);
            Ok(out)
        }
        Region::Ball { center, radius } if d == 1 => region_weights(
            grid,
            &Region::Box {
                lo: vec![center[0] - radius],
                hi: vec![center[0] + radius],
            },
        ),
        Region::Ball { center, radius } => Ok(ball_weights(grid, center, *radius)),
    }
}

fn tensor(
    axes: &[Vec<(usize, f64)>],
    d: usize,
    axis: usize,
    flat: usize,
    w: f64,
    n: usize,
    out: &mut Vec<(usize, f64)>,
) {
    if axis == d {
        out.push((flat, w));
        return;
    }
    for &(i, wi) in &axes[axis] {
        tensor(axes, d, axis + 1, flat * n + i, w * wi, n, out);
    }
}

/// Covered fractions of the cells around a ball, as offsets from the cell
/// holding its center. `frac` is the center's position inside that cell in
/// units of `h`. Cells cut by the sphere are subsampled on a `3^d` lattice.
fn ball_stencil(d: usize, h: f64, frac: [f64; 3], radius: f64) -> Vec<([i64; 3], f64)> {
    let r2 = radius * radius;
    let reach = (radius / h).ceil() as i64 + 1;
    let sub = [-1.0 / 3.0, 0.0, 1.0 / 3.0];
    let mut out = Vec::new();
    let mut idx = [0i64; 3];
    for a in 0..d {
        idx[a] = -reach;
    }
    loop {
        let mut near = 0.0;
        let mut far = 0.0;
        let mut offs = [0.0f64; 3];
        for a in 0..d {
            let c = (idx[a] as f64 + 0.5 - frac[a]) * h;
            offs[a] = c;
            near += (c.abs() - 0.5 * h).max(0.0).powi(2);
            far += (c.abs() + 0.5 * h).powi(2);
        }
        let w = if far <= r2 {
            1.0
        } else if near >= r2 {
            0.0
        } else {
            let total = 3usize.pow(d as u32);
            let mut inside = 0usize;
            for s in 0..total {
                let mut rem = s;
                let mut dist = 0.0;
                for off in offs.iter().take(d) {
                    let p = off + sub[rem % 3] * h;
                    rem /= 3;
                    dist += p * p;
                }
                if dist <= r2 {
                    inside += 1;
                }
            }
            inside as f64 / total as f64
        };
        if w > 0.0 {
            out.push((idx, w));
        }
        let mut a = d;
        loop {
            if a == 0 {
                return out;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] <= reach {
                break;
            }
            idx[a] = -reach;
        }
    }
}

/// Cell holding `center` and the center's position inside it.
fn locate(grid: &GridSpec, center: &[f64]) -> ([i64; 3], [f64; 3]) {
    let h = grid.step();
    let mut base = [0i64; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..grid.dimension {
        let u = (center[a] - grid.origin[a]) / h;
        base[a] = u.floor() as i64;
        frac[a] = u - base[a] as f64;
    }
    (base, frac)
}

fn place(grid: &GridSpec, base: [i64; 3], stencil: &[([i64; 3], f64)]) -> Vec<(usize, f64)> {
    let n = grid.n as i64;
    stencil
        .iter()
        .map(|(off, w)| {
            let flat = (0..grid.dimension).fold(0usize, |acc, a| {
                acc * grid.n + (base[a] + off[a]).rem_euclid(n) as usize
            });
            (flat, *w)
        })
        .collect()
}

fn ball_weights(grid: &GridSpec, center: &[f64], radius: f64) -> Vec<(usize, f64)> {
    let (base, frac) = locate(grid, center);
    place(grid, base, &ball_stencil(grid.dimension, grid.step(), frac, radius))
}

/// Discretized volume of a region: covered fractions times the cell volume.
pub fn region_volume(grid: &GridSpec, region: &Region) -> Result<f64> {
    let w = region_weights(grid, region)?;
    Ok(w.iter().map(|(_, f)| f).sum::<f64>() * grid.cell_volume())
}

impl ChaosMeasure {
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    fn check_interior(&self, region: &Region) -> Result<()> {
        if matches!(region, Region::Full) {
            return Ok(());
        }
        let safe = safe_extent(&self.grid, self.scale, self.epsilon);
        let extent = region.extent();
        if extent > safe {
            return Err(Error::RegionOutsideInterior(format!(
                "extent {extent} exceeds L - 2R - 2w = {safe}"
            )));
        }
        Ok(())
    }

    /// Binary dump of the masses in the grid file format.
    pub fn to_dump(&self, config_digest: Option<String>) -> GridDump {
        GridDump {
            header: DumpHeader {
                format: FORMAT.into(),
                version: VERSION,
                kind: GridKind::Mass,
                grid: self.grid.clone(),
                epsilon: self.epsilon,
                level: self.level,
                variance: self.variance,
                scale: self.scale,
                seed: self.stream.seed,
                replica: self.stream.replica,
                ladder_digest: self.ladder_digest.clone(),
                config_digest,
            },
            values: self.masses.clone(),
        }
    }

    pub fn from_dump(dump: GridDump) -> Result<Self> {
        if dump.header.kind != GridKind::Mass {
            return Err(Error::Decode("file holds a field, not masses".into()));
        }
        let h = dump.header;
        Ok(Self {
            grid: h.grid,
            epsilon: h.epsilon,
            level: h.level,
            masses: dump.values,
            variance: h.variance,
            scale: h.scale,
            stream: FieldStream {
                seed: h.seed,
                replica: h.replica,
            },
            ladder_digest: h.ladder_digest,
        })
    }
}

/// Mass of a region: covered cells weighted by covered volume fraction.
pub fn region_mass(measure: &ChaosMeasure, region: &Region) -> Result<f64> {
    measure.check_interior(region)?;
    let w = region_weights(&measure.grid, region)?;
    Ok(w.iter().map(|&(i, f)| measure.masses[i] * f).sum())
}

/// Masses of all aligned cubes of `b` cells per side tiling the torus.
pub fn block_masses(measure: &ChaosMeasure, b: usize) -> Result<Vec<f64>> {
    let g = &measure.grid;
    if b == 0 || !g.n.is_multiple_of(b) {
        return invalid(format!("block of {b} cells does not tile a side of {}", g.n));
    }
    let side = b as f64 * g.step();
    measure.check_interior(&Region::cube(&vec![0.0; g.dimension], side))?;
    Ok(block_sums(&measure.masses, g.n, g.dimension, b))
}

/// Sums over aligned blocks of `b^d` cells, row-major over blocks.
pub fn block_sums(values: &[f64], n: usize, d: usize, b: usize) -> Vec<f64> {
    let nb = n / b;
    let mut out = vec![0.0; nb.pow(d as u32)];
    for (flat, v) in values.iter().enumerate() {
        let mut rem = flat;
        let mut block = 0usize;
        let mut mul = 1usize;
        for _ in 0..d {
            let i = rem % n;
            rem /= n;
            block += (i / b) * mul;
            mul *= nb;
        }
        out[block] += v;
    }
    // `block` was assembled little-endian; reorder to row-major.
    if d > 1 {
        let mut re = vec![0.0; out.len()];
        for (idx, v) in out.iter().enumerate() {
            let mut rem = idx;
            let mut digits = [0usize; 3];
            for digit in digits.iter_mut().take(d) {
                *digit = rem % nb;
                rem /= nb;
            }
            let row = (0..d).rev().fold(0usize, |acc, a| acc * nb + digits[a]);
            re[row] = *v;
        }
        return re;
    }
    out
}

/// Per-replica region masses along the ladder and a plateau diagnostic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub epsilons: Vec<f64>,
    /// `masses[r][k]`: replica `r` at level `k`.
    pub masses: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub median: Vec<f64>,
    /// Relative change of the median from the previous level.
    pub relative_change: Vec<f64>,
    /// Mean absolute successive increment `E|m_k - m_{k-1}|`.
    pub cauchy: Vec<f64>,
    /// Mean and standard error of the signed increment `m_k - m_{k-1}`.
    pub increment_mean: Vec<f64>,
    pub increment_se: Vec<f64>,
    pub tolerance: f64,
    /// First level from which two consecutive relative changes stay below tolerance.
    pub plateau: Option<usize>,
}

/// Runs the refinement chain of every replica and records region masses.
pub fn convergence_trace(
    ladder: &ShellLadder,
    region: &Region,
    seed: u64,
    replicas: u32,
    tolerance: f64,
) -> Result<ConvergenceTrace> {
    if ladder.finest() < 2 {
        return invalid("convergence trace needs at least 3 ladder levels");
    }
    let masses: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| replica_trace(ladder, region, FieldStream { seed, replica: r }))
        .collect::<Result<_>>()?;
    Ok(summarize_trace(ladder.epsilons.clone(), masses, tolerance))
}

/// Region mass at every level of one replica's refinement chain.
pub fn replica_trace(ladder: &ShellLadder, region: &Region, stream: FieldStream) -> Result<Vec<f64>> {
    let mut sample = synthesize(ladder, 0, stream)?;
    let mut out = Vec::with_capacity(ladder.finest() + 1);
    loop {
        out.push(region_mass(&exponentiate(&sample), region)?);
        if sample.level == ladder.finest() {
            return Ok(out);
        }
        sample = refine(&sample, ladder)?;
    }
}

pub fn summarize_trace(epsilons: Vec<f64>, masses: Vec<Vec<f64>>, tolerance: f64) -> ConvergenceTrace {
    let levels = epsilons.len();
    let n = masses.len() as f64;
    let column = |k: usize| -> Vec<f64> { masses.iter().map(|m| m[k]).collect() };
    let mut mean = Vec::new();
    let mut se = Vec::new();
    let mut median = Vec::new();
    let mut cauchy = Vec::new();
    let mut increment_mean = Vec::new();
    let mut increment_se = Vec::new();
    for k in 0..levels {
        let inc: Vec<f64> = if k == 0 {
            vec![0.0; masses.len()]
        } else {
            masses.iter().map(|r| r[k] - r[k - 1]).collect()
        };
        let (im, is) = crate::stats::mean_se(&inc);
        increment_mean.push(im);
        increment_se.push(is);
        let c = column(k);
        let (m, s) = crate::stats::mean_se(&c);
        mean.push(m);
        se.push(s);
        median.push(crate::stats::median(&c));
        cauchy.push(if k == 0 {
            0.0
        } else {
            masses.iter().map(|r| (r[k] - r[k - 1]).abs()).sum::<f64>() / n
        });
    }
    let relative_change: Vec<f64> = (0..levels)
        .map(|k| {
            if k == 0 || median[k - 1] == 0.0 {
                0.0
            } else {
                (median[k] / median[k - 1] - 1.0).abs()
            }
        })
        .collect();
    let plateau = (1..levels.saturating_sub(1))
        .find(|&k| relative_change[k] < tolerance && relative_change[k + 1] < tolerance);
    ConvergenceTrace {
        epsilons,
        masses,
        mean,
        se,
        median,
        relative_change,
        cauchy,
        increment_mean,
        increment_se,
        tolerance,
        plateau,
    }
}

/// Sampled path of `X(t) = B(m[0, t])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrwPath {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    /// Cumulative mass `m[0, t]` at each time.
    pub mass: Vec<f64>,
}

/// Cumulative mass `m[origin, origin + t]` with uniform density inside cells.
pub fn cumulative_mass(measure: &ChaosMeasure, times: &[f64]) -> Vec<f64> {
    let h = measure.grid.step();
    let mut prefix = Vec::with_capacity(measure.masses.len() + 1);
    let mut acc = 0.0;
    prefix.push(0.0);
    for m in &measure.masses {
        acc += m;
        prefix.push(acc);
    }
    times
        .iter()
        .map(|&t| {
            let u = t / h;
            let i = (u.floor() as usize).min(measure.masses.len());
            let frac = u - i as f64;
            let part = if i < measure.masses.len() {
                frac * measure.masses[i]
            } else {
                0.0
            };
            prefix[i] + part
        })
        .collect()
}

/// Multifractal random walk on a strictly increasing time grid in `(0, t_max]`.
pub fn mrw_path(measure: &ChaosMeasure, times: &[f64], stream: FieldStream) -> Result<MrwPath> {
    if measure.grid.dimension != 1 {
        return invalid("multifractal random walk needs a one-dimensional measure");
    }
    if times.is_empty()
        || times[0] <= 0.0
        || times.windows(2).any(|w| w[1] <= w[0])
        || times.iter().any(|t| !t.is_finite())
    {
        return invalid("time grid must be positive and strictly increasing");
    }
    measure.check_interior(&Region::Box {
        lo: vec![0.0],
        hi: vec![*times.last().unwrap()],
    })?;
    let mass = cumulative_mass(measure, times);
    let mut rng = StreamKey::new(stream.seed, stream.replica, 0, Purpose::Brownian).rng();
    let mut x = Vec::with_capacity(times.len());
    let mut prev_m = 0.0;
    let mut prev_x = 0.0;
    for &m in &mass {
        let dm = (m - prev_m).max(0.0);
        prev_x += dm.sqrt() * normal(&mut rng);
        prev_m = m;
        x.push(prev_x);
    }
    Ok(MrwPath {
        t: times.to_vec(),
        x,
        mass,
    })
}

impl MrwPath {
    /// Realized quadratic variation up to index `upto` using every `stride`-th point.
    pub fn quadratic_variation(&self, upto: usize, stride: usize) -> f64 {
        let mut qv = 0.0;
        let mut prev = 0.0;
        let mut i = stride - 1;
        while i <= upto {
            qv += (self.x[i] - prev).powi(2);
            prev = self.x[i];
            i += stride;
        }
        qv
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,X")?;
        for (t, x) in self.t.iter().zip(&self.x) {
            writeln!(w, "{t:e},{x:e}")?;
        }
        Ok(())
    }
}

/// Coarse-grained dissipation `eps_l = <eps> m(B(x, l)) / |B(x, l)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DissipationSample {
    pub center: [f64; 3],
    pub l: f64,
    pub mean_dissipation: f64,
    pub value: f64,
}

/// Dissipation variables on balls of radius `l`. The ball volume used for
/// normalization is the discretized one, so that `E[eps_l] = <eps>` holds on
/// the grid exactly.
pub fn dissipation_samples(
    measure: &ChaosMeasure,
    centers: &[[f64; 3]],
    l: f64,
    mean_dissipation: f64,
) -> Result<Vec<DissipationSample>> {
    if measure.grid.dimension != 3 {
        return invalid("dissipation variables are defined on three-dimensional measures");
    }
    if !(mean_dissipation.is_finite() && mean_dissipation > 0.0) {
        return invalid("mean dissipation must be positive");
    }
    let g = &measure.grid;
    measure.check_interior(&Region::ball(&[0.0; 3], l))?;
    if !(l.is_finite() && l > 0.0) {
        return invalid("ball radius must be positive");
    }
    // Lattice centers share their position inside a cell; reuse the stencil.
    let mut cached: Option<([f64; 3], Vec<([i64; 3], f64)>, f64)> = None;
    let mut out = Vec::with_capacity(centers.len());
    for c in centers {
        if c.iter().any(|v| !v.is_finite()) {
            return invalid("ball center must be finite");
        }
        let (base, frac) = locate(g, c);
        let reuse = matches!(&cached, Some((f, _, _)) if f.iter().zip(&frac).all(|(a, b)| (a - b).abs() < 1e-9));
        if !reuse {
            let st = ball_stencil(3, g.step(), frac, l);
            let vol = st.iter().map(|(_, w)| w).sum::<f64>() * g.cell_volume();
            cached = Some((frac, st, vol));
        }
        let (_, st, vol) = cached.as_ref().unwrap();
        let m: f64 = place(g, base, st).iter().map(|&(i, w)| measure.masses[i] * w).sum();
        out.push(DissipationSample {
            center: *c,
            l,
            mean_dissipation,
            value: mean_dissipation * m / vol,
        });
    }
    Ok(out)
}

/// Continuum ball volume in `R^3`.
pub fn ball_volume_3d(l: f64) -> f64 {
    4.0 * PI * l.powi(3) / 3.0
}

pub fn write_dissipation_csv<W: Write>(samples: &[DissipationSample], mut w: W) -> Result<()> {
    writeln!(w, "x,y,z,l,eps_l")?;
    for s in samples {
        writeln!(
            w,
            "{:e},{:e},{:e},{:e},{:e}",
            s.center[0], s.center[1], s.center[2], s.l, s.value
        )?;
    }
    Ok(())
}
