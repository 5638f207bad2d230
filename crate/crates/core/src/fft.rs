//! Separable 2-D FFT on row-major planes.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub(crate) struct Fft2 {
    width: usize,
    height: usize,
    rows: Arc<dyn Fft<f64>>,
    cols: Arc<dyn Fft<f64>>,
    rows_inv: Arc<dyn Fft<f64>>,
    cols_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            width,
            height,
            rows: planner.plan_fft_forward(width),
            cols: planner.plan_fft_forward(height),
            rows_inv: planner.plan_fft_inverse(width),
            cols_inv: planner.plan_fft_inverse(height),
        }
    }

    fn run(&self, data: &mut [Complex64], rows: &dyn Fft<f64>, cols: &dyn Fft<f64>) {
        let (w, h) = (self.width, self.height);
        for row in data.chunks_exact_mut(w) {
            rows.process(row);
        }
        let mut column = vec![Complex64::default(); h];
        for x in 0..w {
            for y in 0..h {
                column[y] = data[y * w + x];
            }
            cols.process(&mut column);
            for y in 0..h {
                data[y * w + x] = column[y];
            }
        }
    }

    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut c: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.run(&mut c, self.rows.as_ref(), self.cols.as_ref());
        c
    }

    /// Inverse transform including the `1/(w·h)` normalization.
    pub fn inverse(&self, mut data: Vec<Complex64>) -> Vec<Complex64> {
        self.run(&mut data, self.rows_inv.as_ref(), self.cols_inv.as_ref());
        let scale = 1.0 / (self.width * self.height) as f64;
        for v in &mut data {
            *v *= scale;
        }
        data
    }
}

/// `c[s] = Σ_i a[i + s] · b[i]` with indices taken modulo the plane size.
pub(crate) fn circular_xcorr(a: &[f64], b: &[f64], width: usize, height: usize) -> Vec<f64> {
    let fft = Fft2::new(width, height);
    let fa = fft.forward_real(a);
    let fb = fft.forward_real(b);
    let prod = fa.iter().zip(&fb).map(|(x, y)| x * y.conj()).collect();
    fft.inverse(prod).into_iter().map(|c| c.re).collect()
}
