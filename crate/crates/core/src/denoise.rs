//! Wavelet-domain Wiener denoiser and noise residuals.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::raster::box_mean;
use crate::signal::NoiseResidual;

/// Local-variance windows of the minimum-variance rule.
pub const DEFAULT_WINDOWS: [usize; 4] = [3, 5, 7, 9];

/// Decomposition low-pass of the 8-tap Daubechies orthonormal QMF.
const DB8_LO: [f64; 8] = [
    -0.010597401784997278,
    0.032883011666982945,
    0.030841381835986965,
    -0.18703481171888114,
    -0.02798376941698385,
    0.6308807679295904,
    0.7148465705525415,
    0.2303778133088552,
];

const TAPS: usize = DB8_LO.len();

/// Decomposition high-pass, the alternating flip of the low-pass.
const DB8_HI: [f64; TAPS] = {
    let mut g = [0.0; TAPS];
    let mut j = 0;
    while j < TAPS {
        let v = DB8_LO[TAPS - 1 - j];
        g[j] = if j % 2 == 0 { -v } else { v };
        j += 1;
    }
    g
};

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletDenoiserConfig {
    pub levels: usize,
    pub sigma0: f64,
    pub window_sizes: Vec<usize>,
}

impl Default for WaveletDenoiserConfig {
    fn default() -> Self {
        WaveletDenoiserConfig {
            levels: 4,
            sigma0: 3.0,
            window_sizes: DEFAULT_WINDOWS.to_vec(),
        }
    }
}

impl WaveletDenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::InvalidConfig("wavelet levels must be >= 1".into()));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma0 {} must be > 0",
                self.sigma0
            )));
        }
        if self.window_sizes.is_empty() {
            return Err(Error::InvalidConfig("no variance windows".into()));
        }
        if let Some(w) = self.window_sizes.iter().find(|&&w| w < 3 || w % 2 == 0) {
            return Err(Error::InvalidConfig(format!(
                "window size {w} must be odd and >= 3"
            )));
        }
        Ok(())
    }

    fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        let min = 1usize.checked_shl(self.levels as u32).unwrap_or(usize::MAX);
        if width < min || height < min {
            return Err(Error::TooSmall(format!(
                "{width}x{height} image for {} wavelet levels (needs {min}x{min})",
                self.levels
            )));
        }
        Ok(())
    }
}

/// Anything mapping an image to its noise-free estimate `F(x)`.
pub trait Denoiser {
    /// Unclamped estimate of the noise-free image, row-major.
    fn denoise_plane(&self, img: &Image) -> Result<Vec<f64>>;
}

impl Denoiser for WaveletDenoiserConfig {
    fn denoise_plane(&self, img: &Image) -> Result<Vec<f64>> {
        self.validate()?;
        let (w, h) = img.dims();
        self.check_dims(w, h)?;
        let data: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
        let noise_var = self.sigma0 * self.sigma0;
        Ok(transform(&data, w, h, self.levels, |band, bw, bh| {
            let signal = local_signal_variance(band, bw, bh, noise_var, &self.window_sizes);
            for (c, s) in band.iter_mut().zip(signal) {
                *c *= s / (s + noise_var);
            }
        }))
    }
}

/// Mirror index into `0..n` for half-sample symmetric extension.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

fn coeff_len(n: usize) -> usize {
    (n + TAPS - 1) / 2
}

/// One analysis step along a strided line.
fn analyze(x: &[f64], lo: &mut [f64], hi: &mut [f64]) {
    let n = x.len();
    for o in 0..lo.len() {
        let (mut a, mut d) = (0.0, 0.0);
        for j in 0..TAPS {
            let v = x[reflect(2 * o as isize + 1 - j as isize, n)];
            a += DB8_LO[j] * v;
            d += DB8_HI[j] * v;
        }
        lo[o] = a;
        hi[o] = d;
    }
}

/// Inverse of [`analyze`] for a line of length `out.len()`.
fn synthesize(lo: &[f64], hi: &[f64], out: &mut [f64]) {
    for (n, v) in out.iter_mut().enumerate() {
        let first = n.saturating_sub(1).div_ceil(2);
        let last = ((n + TAPS - 2) / 2).min(lo.len() - 1);
        let mut s = 0.0;
        for o in first..=last {
            let j = 2 * o + 1 - n;
            s += lo[o] * DB8_LO[j] + hi[o] * DB8_HI[j];
        }
        *v = s;
    }
}

/// Four subbands of one level, each `cw`x`ch`.
struct Level {
    cw: usize,
    ch: usize,
    lh: Vec<f64>,
    hl: Vec<f64>,
    hh: Vec<f64>,
}

fn columns(data: &[f64], w: usize, h: usize, ch: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![0.0; w * ch];
    let mut hi = vec![0.0; w * ch];
    let mut line = vec![0.0; h];
    let (mut l, mut d) = (vec![0.0; ch], vec![0.0; ch]);
    for x in 0..w {
        for y in 0..h {
            line[y] = data[y * w + x];
        }
        analyze(&line, &mut l, &mut d);
        for y in 0..ch {
            lo[y * w + x] = l[y];
            hi[y * w + x] = d[y];
        }
    }
    (lo, hi)
}

fn columns_inv(lo: &[f64], hi: &[f64], w: usize, ch: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    let (mut l, mut d) = (vec![0.0; ch], vec![0.0; ch]);
    let mut line = vec![0.0; h];
    for x in 0..w {
        for y in 0..ch {
            l[y] = lo[y * w + x];
            d[y] = hi[y * w + x];
        }
        synthesize(&l, &d, &mut line);
        for y in 0..h {
            out[y * w + x] = line[y];
        }
    }
    out
}

fn decompose(data: &[f64], w: usize, h: usize) -> (Vec<f64>, Level) {
    let (cw, ch) = (coeff_len(w), coeff_len(h));
    let mut lo = vec![0.0; cw * h];
    let mut hi = vec![0.0; cw * h];
    for y in 0..h {
        analyze(
            &data[y * w..(y + 1) * w],
            &mut lo[y * cw..(y + 1) * cw],
            &mut hi[y * cw..(y + 1) * cw],
        );
    }
    let (ll, lh) = columns(&lo, cw, h, ch);
    let (hl, hh) = columns(&hi, cw, h, ch);
    (ll, Level { cw, ch, lh, hl, hh })
}

fn recompose(ll: &[f64], level: &Level, w: usize, h: usize) -> Vec<f64> {
    let lo = columns_inv(ll, &level.lh, level.cw, level.ch, h);
    let hi = columns_inv(&level.hl, &level.hh, level.cw, level.ch, h);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        synthesize(
            &lo[y * level.cw..(y + 1) * level.cw],
            &hi[y * level.cw..(y + 1) * level.cw],
            &mut out[y * w..(y + 1) * w],
        );
    }
    out
}

/// Multi-level decomposition, `shrink` applied to every detail band, and
/// reconstruction. The approximation band is never passed to `shrink`.
fn transform<F>(data: &[f64], w: usize, h: usize, levels: usize, mut shrink: F) -> Vec<f64>
where
    F: FnMut(&mut [f64], usize, usize),
{
    let mut dims = Vec::with_capacity(levels);
    let mut stack = Vec::with_capacity(levels);
    let mut ll = data.to_vec();
    let (mut cw, mut ch) = (w, h);
    for _ in 0..levels {
        let (next, mut level) = decompose(&ll, cw, ch);
        for band in [&mut level.lh, &mut level.hl, &mut level.hh] {
            shrink(band, level.cw, level.ch);
        }
        dims.push((cw, ch));
        (cw, ch) = (level.cw, level.ch);
        stack.push(level);
        ll = next;
    }
    while let (Some(level), Some((pw, ph))) = (stack.pop(), dims.pop()) {
        ll = recompose(&ll, &level, pw, ph);
    }
    ll
}

/// Minimum over `windows` of the clipped local signal variance
/// `max(0, mean(c²) − noise_var)`.
pub fn local_signal_variance(
    coeffs: &[f64],
    width: usize,
    height: usize,
    noise_var: f64,
    windows: &[usize],
) -> Vec<f64> {
    let sq: Vec<f64> = coeffs.iter().map(|c| c * c).collect();
    let mut best = vec![f64::INFINITY; coeffs.len()];
    for &size in windows {
        for (b, m) in best.iter_mut().zip(box_mean(&sq, width, height, size)) {
            *b = b.min((m - noise_var).max(0.0));
        }
    }
    best
}

/// Denoised image, clamped into the intensity range.
pub fn wavelet_denoise(img: &Image, cfg: &WaveletDenoiserConfig) -> Result<Image> {
    let plane = cfg.denoise_plane(img)?;
    Image::with_origin(
        img.width(),
        img.height(),
        plane
            .into_iter()
            .map(|v| v.clamp(0.0, 255.0) as f32)
            .collect(),
        img.origin(),
    )
}

/// `w = x − F(x)` with the unclamped estimate `F(x)`.
pub fn residual(img: &Image, denoiser: &dyn Denoiser) -> Result<NoiseResidual> {
    let plane = denoiser.denoise_plane(img)?;
    let data = img
        .data()
        .iter()
        .zip(plane)
        .map(|(&x, f)| (x as f64 - f) as f32)
        .collect();
    NoiseResidual::new(img.width(), img.height(), data)
}

/// Separable Gaussian blur with mirrored borders.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let (w, h) = img.dims();
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let pass = |src: &[f64], along_x: bool| -> Vec<f64> {
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for (t, k) in kernel.iter().enumerate() {
                    let off = t as isize - r;
                    let idx = if along_x {
                        y * w + reflect(x as isize + off, w)
                    } else {
                        reflect(y as isize + off, h) * w + x
                    };
                    s += k * src[idx];
                }
                out[y * w + x] = s;
            }
        }
        out
    };
    let data: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let blurred = pass(&pass(&data, true), false);
    Image::with_origin(
        w,
        h,
        blurred
            .into_iter()
            .map(|v| v.clamp(0.0, 255.0) as f32)
            .collect(),
        img.origin(),
    )
    .expect("blur preserves shape and range")
}
