//! Maximum-likelihood PRNU estimation and removal of non-unique artifacts.

use crate::denoise::{local_signal_variance, DEFAULT_WINDOWS};
use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::image::Image;
use crate::signal::{Fingerprint, FingerprintKind, NoiseResidual};

/// Denominators below this are treated as unobserved pixels.
pub const DENOMINATOR_EPS: f64 = 1e-6;

/// Streaming sums `Σ w·x` and `Σ x²` over absorbed images.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MleAccumulator {
    dims: Option<(usize, usize)>,
    numerator: Vec<f64>,
    denominator: Vec<f64>,
    count: usize,
}

impl MleAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.dims
    }

    pub fn numerator(&self) -> &[f64] {
        &self.numerator
    }

    pub fn denominator(&self) -> &[f64] {
        &self.denominator
    }

    fn bind(&mut self, dims: (usize, usize)) -> Result<()> {
        match self.dims {
            None => {
                self.dims = Some(dims);
                self.numerator = vec![0.0; dims.0 * dims.1];
                self.denominator = vec![0.0; dims.0 * dims.1];
                Ok(())
            }
            Some(d) if d == dims => Ok(()),
            Some(d) => Err(Error::DimensionMismatch(format!(
                "accumulator is {}x{}, got {}x{}",
                d.0, d.1, dims.0, dims.1
            ))),
        }
    }

    /// Adds one image and its noise residual.
    pub fn absorb(&mut self, img: &Image, residual: &NoiseResidual) -> Result<()> {
        if img.dims() != residual.dims() {
            return Err(Error::DimensionMismatch(format!(
                "image {:?} vs residual {:?}",
                img.dims(),
                residual.dims()
            )));
        }
        self.bind(img.dims())?;
        for (((n, d), &x), &w) in self
            .numerator
            .iter_mut()
            .zip(self.denominator.iter_mut())
            .zip(img.data())
            .zip(residual.data())
        {
            let x = x as f64;
            *n += w as f64 * x;
            *d += x * x;
        }
        self.count += 1;
        Ok(())
    }

    /// Elementwise sum of two accumulators built over disjoint image sets.
    pub fn merge(&mut self, other: &MleAccumulator) -> Result<()> {
        let Some(dims) = other.dims else {
            return Ok(());
        };
        self.bind(dims)?;
        for (a, b) in self.numerator.iter_mut().zip(&other.numerator) {
            *a += b;
        }
        for (a, b) in self.denominator.iter_mut().zip(&other.denominator) {
            *a += b;
        }
        self.count += other.count;
        Ok(())
    }

    /// `k̂ = Σ w·x / Σ x²`, zero where the denominator vanishes.
    pub fn finalize(&self) -> Result<Fingerprint> {
        let (w, h) = match self.dims {
            Some(d) if self.count > 0 => d,
            _ => return Err(Error::Empty("no images absorbed".into())),
        };
        let data = self
            .numerator
            .iter()
            .zip(&self.denominator)
            .map(|(&n, &d)| {
                if d < DENOMINATOR_EPS {
                    0.0
                } else {
                    (n / d) as f32
                }
            })
            .collect();
        Fingerprint::new(w, h, data, FingerprintKind::MleEstimate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CleanOptions {
    /// Also suppress spectral peaks with a Wiener filter in the DFT domain.
    pub wiener_dft: bool,
}

/// Subtracts every row mean, then every column mean.
pub fn zero_mean_rows_cols(data: &mut [f64], width: usize, height: usize) {
    if width == 0 || height == 0 {
        return;
    }
    for row in data.chunks_exact_mut(width) {
        let m = row.iter().sum::<f64>() / width as f64;
        row.iter_mut().for_each(|v| *v -= m);
    }
    for x in 0..width {
        let m = (0..height).map(|y| data[y * width + x]).sum::<f64>() / height as f64;
        for y in 0..height {
            data[y * width + x] -= m;
        }
    }
}

/// Frequency-domain Wiener cleanup: attenuates DFT magnitudes that stand out
/// from their neighbourhood, keeping the phase.
fn wiener_dft(data: &[f64], width: usize, height: usize) -> Vec<f64> {
    let n = (width * height) as f64;
    let mean = data.iter().sum::<f64>() / n;
    let noise_var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if noise_var <= 0.0 {
        return data.to_vec();
    }
    let fft = Fft2::new(width, height);
    let mut spec = fft.forward_real(data);
    let mag: Vec<f64> = spec.iter().map(|c| c.norm() / n.sqrt()).collect();
    let signal = local_signal_variance(&mag, width, height, noise_var, &DEFAULT_WINDOWS);
    for ((c, &m), &s) in spec.iter_mut().zip(&mag).zip(&signal) {
        if m > 0.0 {
            // Keep the noise-like share of each magnitude.
            *c *= noise_var / (s + noise_var);
        } else {
            *c = Default::default();
        }
    }
    fft.inverse(spec).into_iter().map(|c| c.re).collect()
}

/// Removes row/column structure shared by all sensors of a model.
pub fn clean_nua(fp: &Fingerprint, opts: CleanOptions) -> Fingerprint {
    let (w, h) = fp.dims();
    let mut data: Vec<f64> = fp.data().iter().map(|&v| v as f64).collect();
    zero_mean_rows_cols(&mut data, w, h);
    if opts.wiener_dft && w > 0 && h > 0 {
        data = wiener_dft(&data, w, h);
    }
    Fingerprint::new(
        w,
        h,
        data.into_iter().map(|v| v as f32).collect(),
        fp.kind(),
    )
    .expect("cleanup preserves shape and finiteness")
}
