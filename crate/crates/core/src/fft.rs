//! Multi-dimensional complex FFT on row-major cubes, built from 1-D plans.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Lines transformed together along strided axes.
const LINE_BATCH: usize = 32;

/// Unnormalized forward and inverse transforms on an `n^d` cube.
pub struct FftNd {
    n: usize,
    d: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftNd {
    pub fn new(n: usize, d: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            d,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `x_j = sum_k X_k e^{+2 i pi j.k / n}` (no scaling).
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(&self.inverse, data);
    }

    /// `X_k = sum_j x_j e^{-2 i pi j.k / n}` (no scaling).
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(&self.forward, data);
    }

    fn run(&self, plan: &Arc<dyn Fft<f64>>, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.len(), "fft: buffer length mismatch");
        let n = self.n;
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        // Contiguous last axis: all lines in one call.
        plan.process_with_scratch(data, &mut scratch);
        // Strided axes: gather batches of adjacent lines so reads stay contiguous.
        let mut lines = vec![Complex64::new(0.0, 0.0); n * LINE_BATCH];
        for axis in 0..self.d.saturating_sub(1) {
            let stride = n.pow((self.d - 1 - axis) as u32);
            let block = stride * n;
            let batch = LINE_BATCH.min(stride);
            for base in (0..data.len()).step_by(block) {
                for first in (0..stride).step_by(batch) {
                    let start = base + first;
                    let buf = &mut lines[..n * batch];
                    for i in 0..n {
                        let row = &data[start + i * stride..start + i * stride + batch];
                        for (b, v) in row.iter().enumerate() {
                            buf[b * n + i] = *v;
                        }
                    }
                    plan.process_with_scratch(buf, &mut scratch);
                    for i in 0..n {
                        let row = &mut data[start + i * stride..start + i * stride + batch];
                        for (b, v) in row.iter_mut().enumerate() {
                            *v = buf[b * n + i];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_plane_wave() {
        let (n, d) = (8, 3);
        let f = FftNd::new(n, d);
        let orig: Vec<Complex64> = (0..f.len())
            .map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let mut buf = orig.clone();
        f.forward(&mut buf);
        f.inverse(&mut buf);
        for (a, b) in buf.iter().zip(&orig) {
            assert!((a / f.len() as f64 - b).norm() < 1e-12);
        }
        // A delta at frequency (1, 2, 3) inverts to the plane wave.
        let mut spec = vec![Complex64::new(0.0, 0.0); f.len()];
        spec[(1 * n + 2) * n + 3] = Complex64::new(1.0, 0.0);
        f.inverse(&mut spec);
        let (i, j, k) = (5usize, 1usize, 6usize);
        let phase = 2.0 * std::f64::consts::PI * (i + 2 * j + 3 * k) as f64 / n as f64;
        let got = spec[(i * n + j) * n + k];
        assert!((got - Complex64::new(phase.cos(), phase.sin())).norm() < 1e-12);
    }
}
