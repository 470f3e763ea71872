//! Mollified log-correlated Gaussian fields on a periodic grid, built shell by
//! shell so that refining the mollifier scale adds independent increments.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::fft::FftNd;
use crate::kernels::{
    mollified_covariance, KernelSpec, KernelSpectrum, ModelSpec, MollifierKind, MollifierSpec,
    RESOLUTION_LEVEL,
};
use crate::rng::{Purpose, StreamKey};

/// Periodic grid: `n^d` cells of side `length / n`, cell `i` covering
/// `[origin + i h, origin + (i + 1) h)` on each axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct GridSpec {
    pub dimension: usize,
    pub n: usize,
    pub length: f64,
    pub origin: Vec<f64>,
}

#[derive(Deserialize)]
struct RawGrid {
    dimension: usize,
    n: usize,
    length: f64,
    #[serde(default)]
    origin: Option<Vec<f64>>,
}

impl TryFrom<RawGrid> for GridSpec {
    type Error = String;
    fn try_from(raw: RawGrid) -> std::result::Result<Self, String> {
        let origin = raw.origin.unwrap_or_else(|| vec![0.0; raw.dimension]);
        GridSpec::with_origin(raw.dimension, raw.n, raw.length, origin).map_err(|e| e.to_string())
    }
}

/// Largest number of grid cells accepted.
pub const MAX_CELLS: usize = 1 << 27;

impl GridSpec {
    pub fn new(dimension: usize, n: usize, length: f64) -> Result<Self> {
        Self::with_origin(dimension, n, length, vec![0.0; dimension])
    }

    pub fn with_origin(dimension: usize, n: usize, length: f64, origin: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&dimension) {
            return invalid(format!("grid dimension {dimension} outside 1..=3"));
        }
        if n < 2 || !n.is_power_of_two() {
            return invalid(format!("points per side must be a power of two >= 2, got {n}"));
        }
        match n.checked_pow(dimension as u32) {
            Some(c) if c <= MAX_CELLS => {}
            _ => return invalid(format!("grid {n}^{dimension} exceeds {MAX_CELLS} cells")),
        }
        if !(length.is_finite() && length > 0.0) {
            return invalid(format!("side length must be positive, got {length}"));
        }
        if origin.len() != dimension || origin.iter().any(|o| !o.is_finite()) {
            return invalid("origin must have one finite coordinate per dimension");
        }
        Ok(Self {
            dimension,
            n,
            length,
            origin,
        })
    }

    pub fn step(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn cells(&self) -> usize {
        self.n.pow(self.dimension as u32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.step().powi(self.dimension as i32)
    }

    /// Row-major multi-index of a flat cell index.
    pub fn unflatten(&self, mut idx: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        for axis in (0..self.dimension).rev() {
            out[axis] = idx % self.n;
            idx /= self.n;
        }
        out
    }

    pub fn flatten(&self, multi: &[usize]) -> usize {
        multi[..self.dimension]
            .iter()
            .fold(0, |acc, &i| acc * self.n + i)
    }

    /// Center of a cell along each axis.
    pub fn center(&self, multi: &[usize]) -> [f64; 3] {
        let h = self.step();
        let mut out = [0.0; 3];
        for axis in 0..self.dimension {
            out[axis] = self.origin[axis] + (multi[axis] as f64 + 0.5) * h;
        }
        out
    }
}

/// Signed frequency index of FFT bin `k`.
fn principal(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Scale schedule `eps_0 > eps_1 > ... > eps_K`.
pub fn geometric_schedule(eps0: f64, shells: usize) -> Vec<f64> {
    (0..=shells).map(|k| eps0 * 0.5f64.powi(k as i32)).collect()
}

/// Smallest mollifier scale the grid resolves for every listed family.
pub fn finest_admissible(grid: &GridSpec, kinds: &[MollifierKind]) -> f64 {
    kinds
        .iter()
        .map(|&k| 2.0 * grid.step() * MollifierSpec::unit_cutoff(k, grid.dimension, RESOLUTION_LEVEL))
        .fold(0.0, f64::max)
}

/// Halving schedule from `eps0` down to the finest scale the grid resolves.
pub fn admissible_schedule(eps0: f64, grid: &GridSpec, kinds: &[MollifierKind]) -> Result<Vec<f64>> {
    let floor = finest_admissible(grid, kinds);
    if eps0 < floor {
        return invalid(format!("initial scale {eps0:e} below grid resolution limit {floor:e}"));
    }
    let mut out = vec![eps0];
    while out.last().unwrap() * 0.5 >= floor {
        out.push(out.last().unwrap() * 0.5);
    }
    Ok(out)
}

/// Continuous shell weight: `w_0 = f^ theta^(eps_0 xi)` and, for `k >= 1`,
/// `w_k = f^ (theta^(eps_k xi) - theta^(eps_{k-1} xi))`.
pub fn shell_weight(
    spectrum: &KernelSpectrum,
    kind: MollifierKind,
    epsilons: &[f64],
    k: usize,
    xi: f64,
) -> f64 {
    let d = spectrum.dimension;
    let f = spectrum.eval(xi);
    let th = |e: f64| MollifierSpec::theta_hat_unit(kind, d, e * xi);
    if k == 0 {
        f * th(epsilons[0])
    } else {
        f * (th(epsilons[k]) - th(epsilons[k - 1]))
    }
}

/// Frequency-domain amplitudes of every shell on a grid.
#[derive(Debug, Clone)]
pub struct ShellLadder {
    pub kernel: KernelSpec,
    pub mollifier: MollifierKind,
    pub epsilons: Vec<f64>,
    pub grid: GridSpec,
    amplitudes: Vec<Vec<f64>>,
    shell_variance: Vec<f64>,
    /// Negative embedding mass clipped to zero, relative to the trace.
    pub clipped_fraction: f64,
    digest: String,
}

/// Below this ratio to the largest eigenvalue of a shell, eigenvalues are dropped.
const EIGEN_FLOOR: f64 = 1e-24;
/// Spectral truncation level for alias sums.
const ALIAS_LEVEL: f64 = 1e-17;

/// Builds the shell ladder on the grid's discrete frequencies.
///
/// Eigenvalues of the periodized covariance are
/// `h^{-d} sum_a w((k + a n) / L)` over alias vectors `a`.
pub fn build_ladder(
    kernel: &KernelSpec,
    kind: MollifierKind,
    epsilons: &[f64],
    grid: &GridSpec,
) -> Result<ShellLadder> {
    let d = grid.dimension;
    if kernel.dimension != d {
        return invalid(format!(
            "kernel dimension {} does not match grid dimension {d}",
            kernel.dimension
        ));
    }
    if epsilons.is_empty() {
        return invalid("ladder needs at least one scale");
    }
    if epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0))
        || epsilons.windows(2).any(|w| w[1] >= w[0])
    {
        return invalid("scale schedule must be positive and strictly decreasing");
    }
    let finest = *epsilons.last().unwrap();
    let need = 2.0 * grid.step() * MollifierSpec::unit_cutoff(kind, d, RESOLUTION_LEVEL);
    if finest < need {
        return invalid(format!(
            "finest scale {finest:e} below grid resolution limit {need:e} (step {:e})",
            grid.step()
        ));
    }
    let n = grid.n;
    let l = grid.length;
    let xi_cut = MollifierSpec::unit_cutoff(kind, d, ALIAS_LEVEL) / finest;
    let spectrum = KernelSpectrum::new(kernel, xi_cut * (d as f64).sqrt())?;
    let m_cut = (xi_cut * l).floor() as i64;
    let aliases: Vec<Vec<i64>> = (0..n)
        .map(|k| {
            let m0 = principal(k, n);
            let ni = n as i64;
            let mut v = vec![m0];
            let mut a = 1;
            loop {
                let mut added = false;
                for m in [m0 + a * ni, m0 - a * ni] {
                    if m.abs() <= m_cut {
                        v.push(m);
                        added = true;
                    }
                }
                if !added {
                    break;
                }
                a += 1;
            }
            v
        })
        .collect();

    let shells = epsilons.len();
    let cells = grid.cells();
    let mut lambdas: Vec<Vec<f64>> = vec![vec![0.0; cells]; shells];
    let mut cache: HashMap<u64, usize> = HashMap::new();
    let mut cached: Vec<f64> = Vec::new();
    let hd = grid.step().powi(d as i32);
    let weight_row = |key: u64, cache: &mut HashMap<u64, usize>, cached: &mut Vec<f64>| -> Result<usize> {
        if let Some(&i) = cache.get(&key) {
            return Ok(i);
        }
        let xi = (key as f64).sqrt() / l;
        let start = cached.len();
        for k in 0..shells {
            let w = shell_weight(&spectrum, kind, epsilons, k, xi);
            if w < -1e-12 {
                return Err(Error::NegativeShellWeight { shell: k, value: w });
            }
            cached.push(w);
        }
        cache.insert(key, start);
        Ok(start)
    };

    let mut multi = [0usize; 3];
    for flat in 0..cells {
        let mut rem = flat;
        for axis in (0..d).rev() {
            multi[axis] = rem % n;
            rem /= n;
        }
        let lists: Vec<&Vec<i64>> = (0..d).map(|a| &aliases[multi[a]]).collect();
        let mut pos = [0usize; 3];
        loop {
            let key: u64 = (0..d).map(|a| (lists[a][pos[a]] * lists[a][pos[a]]) as u64).sum();
            let at = weight_row(key, &mut cache, &mut cached)?;
            for (k, lam) in lambdas.iter_mut().enumerate() {
                lam[flat] += cached[at + k];
            }
            // Odometer over alias combinations.
            let mut axis = 0;
            loop {
                if axis == d {
                    break;
                }
                pos[axis] += 1;
                if pos[axis] < lists[axis].len() {
                    break;
                }
                pos[axis] = 0;
                axis += 1;
            }
            if axis == d {
                break;
            }
        }
    }
    for lam in lambdas.iter_mut() {
        for v in lam.iter_mut() {
            *v /= hd;
        }
    }
    // Constant part of the remainder: covariance c everywhere.
    lambdas[0][0] += spectrum.atom * cells as f64;

    let mut clipped_fraction = 0.0f64;
    let mut amplitudes = Vec::with_capacity(shells);
    let mut shell_variance = Vec::with_capacity(shells);
    for lam in lambdas {
        let trace: f64 = lam.iter().filter(|v| **v > 0.0).sum();
        let negative: f64 = -lam.iter().filter(|v| **v < 0.0).sum::<f64>();
        if negative > 0.0 {
            let fraction = negative / trace.max(f64::MIN_POSITIVE);
            if fraction > 1e-8 {
                return Err(Error::NegativeEmbedding {
                    negative_mass: negative,
                    fraction,
                });
            }
            clipped_fraction = clipped_fraction.max(fraction);
        }
        let max = lam.iter().fold(0.0f64, |m, v| m.max(*v));
        let floor = max * EIGEN_FLOOR;
        let mut var = 0.0;
        let amp: Vec<f64> = lam
            .iter()
            .map(|&v| {
                if v > floor {
                    var += v;
                    (v / cells as f64).sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        shell_variance.push(var / cells as f64);
        amplitudes.push(amp);
    }

    let digest = ladder_digest(kernel, kind, epsilons, grid);
    Ok(ShellLadder {
        kernel: kernel.clone(),
        mollifier: kind,
        epsilons: epsilons.to_vec(),
        grid: grid.clone(),
        amplitudes,
        shell_variance,
        clipped_fraction,
        digest,
    })
}

fn ladder_digest(kernel: &KernelSpec, kind: MollifierKind, epsilons: &[f64], grid: &GridSpec) -> String {
    let model = ModelSpec::from_parts(
        kernel,
        MollifierSpec {
            kind,
            epsilon: *epsilons.last().unwrap(),
        },
    );
    let doc = serde_json::json!({
        "model": model,
        "epsilons": epsilons,
        "grid": grid,
    });
    hex::encode(Sha256::digest(doc.to_string().as_bytes()))
}

impl ShellLadder {
    /// Index of the finest level.
    pub fn finest(&self) -> usize {
        self.epsilons.len() - 1
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Exact variance of one shell's discrete field.
    pub fn shell_variance(&self, k: usize) -> f64 {
        self.shell_variance[k]
    }

    /// Exact variance of the discrete field at `level` (shells `0..=level`).
    pub fn variance(&self, level: usize) -> f64 {
        self.shell_variance[..=level].iter().sum()
    }

    /// Discrete covariance of the level-`level` field at a lattice lag.
    pub fn covariance(&self, level: usize, lag: &[i64]) -> f64 {
        let g = &self.grid;
        let n = g.n;
        let mut total = 0.0;
        for amp in &self.amplitudes[..=level] {
            for (flat, a) in amp.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                let multi = g.unflatten(flat);
                let phase: f64 = (0..g.dimension)
                    .map(|ax| multi[ax] as f64 * lag[ax] as f64 / n as f64)
                    .sum();
                total += a * a * (2.0 * PI * phase).cos();
            }
        }
        total
    }

    /// Covariance at every lattice lag, row-major like the grid, by FFT.
    pub fn covariance_cube(&self, level: usize) -> Vec<f64> {
        let g = &self.grid;
        let fft = FftNd::new(g.n, g.dimension);
        let mut buf: Vec<Complex64> = (0..g.cells())
            .map(|i| {
                let s: f64 = self.amplitudes[..=level].iter().map(|a| a[i] * a[i]).sum();
                Complex64::new(s, 0.0)
            })
            .collect();
        fft.inverse(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }

    /// Covariance along the first axis for every lag `0..n`.
    pub fn covariance_profile(&self, level: usize) -> Vec<f64> {
        let g = &self.grid;
        let cube = self.covariance_cube(level);
        let stride = g.n.pow(g.dimension as u32 - 1);
        (0..g.n).map(|j| cube[j * stride]).collect()
    }

    /// Variance `q_eps(0)` of the continuum field at `level`, by quadrature.
    pub fn continuum_variance(&self, level: usize) -> Result<f64> {
        let moll = MollifierSpec::new(self.mollifier, self.epsilons[level])?;
        Ok(mollified_covariance(&self.kernel, &moll, 0.0)?.value)
    }

    fn shell_coefficients(&self, shell: usize, stream: FieldStream, out: &mut [Complex64]) {
        let key = StreamKey::new(stream.seed, stream.replica, shell as u16, Purpose::Field);
        let mut rng = key.rng();
        for (c, &a) in out.iter_mut().zip(&self.amplitudes[shell]) {
            if a == 0.0 {
                continue;
            }
            let re = crate::rng::normal(&mut rng);
            let im = crate::rng::normal(&mut rng);
            *c += Complex64::new(a * re, a * im);
        }
    }

    fn realize(&self, shells: std::ops::RangeInclusive<usize>, stream: FieldStream) -> Vec<f64> {
        let g = &self.grid;
        let mut buf = vec![Complex64::new(0.0, 0.0); g.cells()];
        for k in shells {
            self.shell_coefficients(k, stream, &mut buf);
        }
        FftNd::new(g.n, g.dimension).inverse(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }

    /// Increment field of one shell.
    pub fn shell_field(&self, shell: usize, stream: FieldStream) -> Result<Vec<f64>> {
        if shell > self.finest() {
            return Err(Error::LadderExhausted(shell));
        }
        Ok(self.realize(shell..=shell, stream))
    }
}

/// Replica identity for field streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldStream {
    pub seed: u64,
    pub replica: u32,
}

/// One realization of the mollified field at a ladder level.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub grid: GridSpec,
    pub level: usize,
    pub epsilon: f64,
    pub values: Vec<f64>,
    /// Exact variance of the discrete field.
    pub variance: f64,
    /// Integral scale `R` of the kernel.
    pub scale: f64,
    pub stream: FieldStream,
    pub ladder_digest: String,
}

/// Field with all shells `0..=level` combined in one transform.
pub fn synthesize(ladder: &ShellLadder, level: usize, stream: FieldStream) -> Result<FieldSample> {
    if level > ladder.finest() {
        return Err(Error::LadderExhausted(level));
    }
    Ok(FieldSample {
        grid: ladder.grid.clone(),
        level,
        epsilon: ladder.epsilons[level],
        values: ladder.realize(0..=level, stream),
        variance: ladder.variance(level),
        scale: ladder.kernel.scale,
        stream,
        ladder_digest: ladder.digest.clone(),
    })
}

/// Adds the next shell: `X_{k+1} = X_k + independent shell field`.
pub fn refine(sample: &FieldSample, ladder: &ShellLadder) -> Result<FieldSample> {
    if sample.ladder_digest != ladder.digest {
        return invalid("sample was not generated by this ladder");
    }
    let next = sample.level + 1;
    let inc = ladder.shell_field(next, sample.stream)?;
    let values = sample.values.iter().zip(&inc).map(|(a, b)| a + b).collect();
    Ok(FieldSample {
        grid: sample.grid.clone(),
        level: next,
        epsilon: ladder.epsilons[next],
        values,
        variance: ladder.variance(next),
        scale: sample.scale,
        stream: sample.stream,
        ladder_digest: sample.ladder_digest.clone(),
    })
}

/// Iterates the refinement chain `X_0, X_1, ..., X_K` of one replica.
pub fn refinement_chain(ladder: &ShellLadder, stream: FieldStream) -> Result<Vec<FieldSample>> {
    let mut out = vec![synthesize(ladder, 0, stream)?];
    for _ in 0..ladder.finest() {
        let next = refine(out.last().unwrap(), ladder)?;
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;

    fn ladder_1d(n: usize, shells: usize) -> ShellLadder {
        let kernel = KernelSpec::log_plus(1, 1.0, 1.0).unwrap();
        let grid = GridSpec::new(1, n, 4.0).unwrap();
        build_ladder(&kernel, MollifierKind::Gaussian, &geometric_schedule(0.125, shells), &grid).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(1, 100, 1.0).is_err());
        assert!(GridSpec::new(4, 8, 1.0).is_err());
        assert!(GridSpec::new(2, 8, -1.0).is_err());
        assert!(GridSpec::new(3, 1 << 10, 1.0).is_err());
        let g = GridSpec::new(3, 8, 2.0).unwrap();
        assert_eq!(g.flatten(&g.unflatten(311)), 311);
        assert_eq!(g.center(&[0, 1, 7]), [0.125, 0.375, 1.875]);
        let parsed: GridSpec = serde_json::from_str(r#"{"dimension":2,"n":4,"length":1.0}"#).unwrap();
        assert_eq!(parsed.origin, vec![0.0, 0.0]);
        assert!(serde_json::from_str::<GridSpec>(r#"{"dimension":2,"n":3,"length":1.0}"#).is_err());
    }

    #[test]
    fn telescoping_on_continuum_weights() {
        let kernel = KernelSpec::log_plus(1, 1.0, 1.0).unwrap();
        let spectrum = KernelSpectrum::new(&kernel, 100.0).unwrap();
        let eps = geometric_schedule(0.5, 6);
        for &xi in &[0.3, 1.0, 7.0] {
            let total: f64 = (0..eps.len())
                .map(|k| shell_weight(&spectrum, MollifierKind::Gaussian, &eps, k, xi))
                .sum();
            let direct = spectrum.eval(xi) * MollifierSpec::theta_hat_unit(MollifierKind::Gaussian, 1, eps[6] * xi);
            assert!((total - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn ladder_rejects_unresolved_scale() {
        let kernel = KernelSpec::log_plus(1, 1.0, 1.0).unwrap();
        let grid = GridSpec::new(1, 64, 4.0).unwrap();
        let err = build_ladder(&kernel, MollifierKind::Gaussian, &[0.1, 0.01], &grid);
        assert!(err.is_err());
        assert!(build_ladder(&kernel, MollifierKind::Gaussian, &[0.1, 0.2], &grid).is_err());
    }

    #[test]
    fn discrete_variance_tracks_continuum() {
        let ladder = ladder_1d(4096, 5);
        for level in [0, 3, 5] {
            let exact = ladder.variance(level);
            let q = ladder.continuum_variance(level).unwrap();
            assert!((exact - q).abs() < 1e-6, "level {level}: {exact} vs {q}");
            let prof = ladder.covariance_profile(level);
            assert!((prof[0] - exact).abs() < 1e-9);
            assert!((ladder.covariance(level, &[0]) - exact).abs() < 1e-9);
        }
    }

    #[test]
    fn refine_equals_combined_synthesis() {
        let ladder = ladder_1d(1024, 3);
        let stream = FieldStream { seed: 11, replica: 2 };
        let chain = refinement_chain(&ladder, stream).unwrap();
        let direct = synthesize(&ladder, 3, stream).unwrap();
        for (a, b) in chain[3].values.iter().zip(&direct.values) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(matches!(refine(&chain[3], &ladder), Err(Error::LadderExhausted(4))));
        // Determinism.
        let again = synthesize(&ladder, 3, stream).unwrap();
        assert_eq!(again, direct);
    }
}
