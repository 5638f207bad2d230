//! Manipulation localization from sliding-window correlations and a
//! content-based correlation predictor.

use std::fmt::Write as _;
use std::path::Path;

use crate::detect::{ncc_values, roc, RocCurve, ScoreSet};
use crate::error::{Error, Result};
use crate::image::{write_gray_pgm, Image, SATURATION_LEVEL};
use crate::raster::{box_mean, Mask, Rect};
use crate::signal::{Fingerprint, NoiseResidual};
use crate::spncnn::Extractor;

pub const DEFAULT_WINDOW: usize = 64;
pub const DEFAULT_STRIDE: usize = 8;

/// Neighbourhood of the local variance behind the texture feature.
const TEXTURE_NEIGHBOURHOOD: usize = 5;

/// Placement of square windows on an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGrid {
    pub image_width: usize,
    pub image_height: usize,
    pub window: usize,
    pub stride: usize,
    pub cols: usize,
    pub rows: usize,
}

impl WindowGrid {
    pub fn new(
        image_width: usize,
        image_height: usize,
        window: usize,
        stride: usize,
    ) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::InvalidConfig(
                "window and stride must be >= 1".into(),
            ));
        }
        if window > image_width || window > image_height {
            return Err(Error::TooSmall(format!(
                "{image_width}x{image_height} image for a {window}px window"
            )));
        }
        Ok(WindowGrid {
            image_width,
            image_height,
            window,
            stride,
            cols: (image_width - window) / stride + 1,
            rows: (image_height - window) / stride + 1,
        })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Region of window `i` in row-major grid order.
    pub fn rect(&self, i: usize) -> Rect {
        let (r, c) = (i / self.cols, i % self.cols);
        Rect::new(r * self.stride, c * self.stride, self.window, self.window)
    }
}

/// One value per window, row-major over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    pub grid: WindowGrid,
    pub values: Vec<f64>,
    /// Windows whose correlation was undefined; their value is 0.
    pub degenerate: Vec<bool>,
}

impl CorrelationMap {
    pub fn new(grid: WindowGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} windows",
                values.len(),
                grid.len()
            )));
        }
        let degenerate = vec![false; values.len()];
        Ok(CorrelationMap {
            grid,
            values,
            degenerate,
        })
    }

    /// CSV rows `row,col,top,left,value,degenerate`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,top,left,value,degenerate\n");
        for (i, (v, d)) in self.values.iter().zip(&self.degenerate).enumerate() {
            let r = self.grid.rect(i);
            let _ = writeln!(
                out,
                "{},{},{},{},{v},{}",
                i / self.grid.cols,
                i % self.grid.cols,
                r.top,
                r.left,
                *d as u8
            );
        }
        out
    }
}

/// Window correlations of a residual against a template of the same grid.
pub fn sliding_corr_residual(
    w: &NoiseResidual,
    template: &[f32],
    grid: WindowGrid,
) -> Result<CorrelationMap> {
    let (iw, ih) = w.dims();
    if (iw, ih) != (grid.image_width, grid.image_height) || template.len() != iw * ih {
        return Err(Error::DimensionMismatch(format!(
            "residual {iw}x{ih}, template {} samples, grid for {}x{}",
            template.len(),
            grid.image_width,
            grid.image_height
        )));
    }
    let mut map = CorrelationMap::new(grid, vec![0.0; grid.len()])?;
    for i in 0..grid.len() {
        let rect = grid.rect(i);
        let a = rect.extract(w.data(), iw, ih)?;
        let b = rect.extract(template, iw, ih)?;
        match ncc_values(&a, &b) {
            Ok(v) => map.values[i] = v,
            Err(Error::Degenerate(_)) => map.degenerate[i] = true,
            Err(e) => return Err(e),
        }
    }
    Ok(map)
}

/// Runs the extractor once and correlates every window with the matching
/// crop of the extractor's reference template.
pub fn sliding_corr(
    img: &Image,
    fp: &Fingerprint,
    extractor: &Extractor,
    window: usize,
    stride: usize,
) -> Result<CorrelationMap> {
    if img.dims() != fp.dims() {
        return Err(Error::DimensionMismatch(format!(
            "image {:?} vs fingerprint {:?}",
            img.dims(),
            fp.dims()
        )));
    }
    let grid = WindowGrid::new(img.width(), img.height(), window, stride)?;
    let w = extractor.residual(img)?;
    let template = extractor.reference().template(fp, img)?;
    sliding_corr_residual(&w, &template, grid)
}

/// Content descriptors of one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub mean_intensity: f64,
    /// Mean of `1 / (1 + local variance)` over 5x5 neighbourhoods.
    pub texture: f64,
    pub saturation_fraction: f64,
    /// Mean of `|dx| + |dy|` forward differences.
    pub edge_energy: f64,
}

pub const FEATURE_NAMES: [&str; 4] = [
    "mean_intensity",
    "texture",
    "saturation_fraction",
    "edge_energy",
];

impl FeatureVector {
    pub fn to_array(&self) -> [f64; 4] {
        [
            self.mean_intensity,
            self.texture,
            self.saturation_fraction,
            self.edge_energy,
        ]
    }
}

/// Sum over any rectangle in constant time.
struct Integral {
    width: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(data: &[f64], width: usize, height: usize) -> Self {
        let iw = width + 1;
        let mut sums = vec![0.0; iw * (height + 1)];
        for y in 0..height {
            let mut row = 0.0;
            for x in 0..width {
                row += data[y * width + x];
                sums[(y + 1) * iw + x + 1] = sums[y * iw + x + 1] + row;
            }
        }
        Integral { width: iw, sums }
    }

    fn mean(&self, r: Rect) -> f64 {
        let s = |y: usize, x: usize| self.sums[y * self.width + x];
        let total = s(r.bottom(), r.right()) - s(r.top, r.right()) - s(r.bottom(), r.left)
            + s(r.top, r.left);
        total / r.area() as f64
    }
}

/// Per-pixel feature planes of an image.
struct FeaturePlanes {
    intensity: Integral,
    texture: Integral,
    saturated: Integral,
    edges: Integral,
}

impl FeaturePlanes {
    fn new(img: &Image) -> Self {
        let (w, h) = img.dims();
        let x: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
        let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
        let m = box_mean(&x, w, h, TEXTURE_NEIGHBOURHOOD);
        let m2 = box_mean(&sq, w, h, TEXTURE_NEIGHBOURHOOD);
        let texture: Vec<f64> = m
            .iter()
            .zip(&m2)
            .map(|(a, b)| 1.0 / (1.0 + (b - a * a).max(0.0)))
            .collect();
        let saturated: Vec<f64> = img
            .data()
            .iter()
            .map(|&v| (v >= SATURATION_LEVEL) as u8 as f64)
            .collect();
        let mut edges = vec![0.0; w * h];
        for yy in 0..h {
            for xx in 0..w {
                let c = x[yy * w + xx];
                let gx = if xx + 1 < w {
                    (x[yy * w + xx + 1] - c).abs()
                } else {
                    0.0
                };
                let gy = if yy + 1 < h {
                    (x[(yy + 1) * w + xx] - c).abs()
                } else {
                    0.0
                };
                edges[yy * w + xx] = gx + gy;
            }
        }
        FeaturePlanes {
            intensity: Integral::new(&x, w, h),
            texture: Integral::new(&texture, w, h),
            saturated: Integral::new(&saturated, w, h),
            edges: Integral::new(&edges, w, h),
        }
    }

    fn at(&self, r: Rect) -> FeatureVector {
        FeatureVector {
            mean_intensity: self.intensity.mean(r),
            texture: self.texture.mean(r),
            saturation_fraction: self.saturated.mean(r).clamp(0.0, 1.0),
            edge_energy: self.edges.mean(r),
        }
    }
}

/// Features of a single window.
pub fn window_features(img: &Image, rect: Rect) -> Result<FeatureVector> {
    rect.check(img.width(), img.height())?;
    if rect.area() == 0 {
        return Err(Error::Empty("zero-area window".into()));
    }
    Ok(FeaturePlanes::new(img).at(rect))
}

/// Features of every window of `grid`.
pub fn extract_features(img: &Image, grid: WindowGrid) -> Result<Vec<FeatureVector>> {
    if img.dims() != (grid.image_width, grid.image_height) {
        return Err(Error::DimensionMismatch(format!(
            "image {:?} vs grid for {}x{}",
            img.dims(),
            grid.image_width,
            grid.image_height
        )));
    }
    let planes = FeaturePlanes::new(img);
    Ok((0..grid.len()).map(|i| planes.at(grid.rect(i))).collect())
}

/// Linear correlation predictor `ρ̂ = Σ wᵢ fᵢ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    /// One weight per feature followed by the bias.
    pub weights: Vec<f64>,
    pub feature_names: Vec<String>,
    /// Root-mean-square training residual.
    pub rms: f64,
}

impl PredictorModel {
    pub fn bias(&self) -> f64 {
        *self.weights.last().expect("bias present")
    }

    pub fn predict_one(&self, f: &FeatureVector) -> f64 {
        let n = self.weights.len() - 1;
        f.to_array()
            .iter()
            .zip(&self.weights[..n])
            .map(|(x, w)| x * w)
            .sum::<f64>()
            + self.bias()
    }

    pub fn predict(&self, features: &[FeatureVector], grid: WindowGrid) -> Result<CorrelationMap> {
        CorrelationMap::new(grid, features.iter().map(|f| self.predict_one(f)).collect())
    }
}

/// Solves the symmetric system `a x = b` by Gaussian elimination with
/// partial pivoting; `None` when a pivot vanishes relative to `scale`.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>, scale: f64) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let (upper, lower) = a.split_at_mut(col + 1);
        let pivot = &upper[col];
        for (i, r) in lower.iter_mut().enumerate() {
            let f = r[col] / pivot[col];
            for (x, p) in r[col..].iter_mut().zip(&pivot[col..]) {
                *x -= f * p;
            }
            b[col + 1 + i] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Least squares on centred, unit-variance features; falls back to ridge
/// regularization when the normal equations are singular.
pub fn fit_predictor(features: &[FeatureVector], rhos: &[f64]) -> Result<PredictorModel> {
    let nf = FEATURE_NAMES.len();
    if features.len() != rhos.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature vectors for {} correlations",
            features.len(),
            rhos.len()
        )));
    }
    if features.len() < nf + 1 {
        return Err(Error::TooSmall(format!(
            "{} samples for {} coefficients",
            features.len(),
            nf + 1
        )));
    }
    let n = features.len() as f64;
    let rows: Vec<[f64; 4]> = features.iter().map(|f| f.to_array()).collect();
    if rows.iter().flatten().chain(rhos).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("predictor training data".into()));
    }
    let mean: Vec<f64> = (0..nf)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let std: Vec<f64> = (0..nf)
        .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    let active: Vec<usize> = (0..nf)
        .filter(|&j| std[j] > 1e-12 * (1.0 + mean[j].abs()))
        .collect();
    let y_mean = rhos.iter().sum::<f64>() / n;
    let z = |r: &[f64; 4], j: usize| (r[j] - mean[j]) / std[j];
    let k = active.len();
    let mut ata = vec![vec![0.0; k]; k];
    let mut aty = vec![0.0; k];
    for (r, &y) in rows.iter().zip(rhos) {
        for (a, &ja) in active.iter().enumerate() {
            let za = z(r, ja);
            aty[a] += za * (y - y_mean);
            for (b, &jb) in active.iter().enumerate() {
                ata[a][b] += za * z(r, jb);
            }
        }
    }
    let trace: f64 = (0..k).map(|i| ata[i][i]).sum();
    let beta = match solve(ata.clone(), aty.clone(), trace.max(1.0)) {
        Some(b) => b,
        None => {
            let lambda = 1e-6 * trace;
            for (i, row) in ata.iter_mut().enumerate() {
                row[i] += lambda;
            }
            solve(ata, aty, trace.max(1.0))
                .ok_or_else(|| Error::Degenerate("singular predictor system".into()))?
        }
    };
    let mut weights = vec![0.0; nf + 1];
    for (b, &j) in beta.iter().zip(&active) {
        weights[j] = b / std[j];
    }
    weights[nf] = y_mean - (0..nf).map(|j| weights[j] * mean[j]).sum::<f64>();
    let mut model = PredictorModel {
        weights,
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        rms: 0.0,
    };
    let sse: f64 = features
        .iter()
        .zip(rhos)
        .map(|(f, y)| (model.predict_one(f) - y).powi(2))
        .sum();
    model.rms = (sse / n).sqrt();
    Ok(model)
}

/// `Δ = measured − predicted`; strongly negative where the fingerprint is absent.
pub fn delta_map(measured: &CorrelationMap, predicted: &CorrelationMap) -> Result<CorrelationMap> {
    if measured.grid != predicted.grid {
        return Err(Error::DimensionMismatch(format!(
            "window grids differ: {:?} vs {:?}",
            measured.grid, predicted.grid
        )));
    }
    let values = measured
        .values
        .iter()
        .zip(&predicted.values)
        .map(|(a, b)| a - b)
        .collect();
    let mut delta = CorrelationMap::new(measured.grid, values)?;
    for (d, (a, b)) in delta
        .degenerate
        .iter_mut()
        .zip(measured.degenerate.iter().zip(&predicted.degenerate))
    {
        *d = *a || *b;
    }
    Ok(delta)
}

/// Per-pixel mean of the values of all windows covering the pixel. Pixels
/// left uncovered by the grid take the value of the nearest covered pixel.
pub fn pixel_values(map: &CorrelationMap) -> Vec<f64> {
    let g = map.grid;
    let (w, h) = (g.image_width, g.image_height);
    let mut sum = vec![0.0f64; (w + 1) * (h + 1)];
    let mut cnt = vec![0i64; (w + 1) * (h + 1)];
    for (i, v) in map.values.iter().enumerate() {
        let r = g.rect(i);
        for (y, x, s) in [
            (r.top, r.left, 1.0),
            (r.top, r.right(), -1.0),
            (r.bottom(), r.left, -1.0),
            (r.bottom(), r.right(), 1.0),
        ] {
            sum[y * (w + 1) + x] += s * v;
            cnt[y * (w + 1) + x] += s as i64;
        }
    }
    for y in 0..=h {
        for x in 1..=w {
            sum[y * (w + 1) + x] += sum[y * (w + 1) + x - 1];
            cnt[y * (w + 1) + x] += cnt[y * (w + 1) + x - 1];
        }
    }
    for y in 1..=h {
        for x in 0..=w {
            sum[y * (w + 1) + x] += sum[(y - 1) * (w + 1) + x];
            cnt[y * (w + 1) + x] += cnt[(y - 1) * (w + 1) + x];
        }
    }
    let covered_w = (g.cols - 1) * g.stride + g.window;
    let covered_h = (g.rows - 1) * g.stride + g.window;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let sy = y.min(covered_h - 1);
        for x in 0..w {
            let sx = x.min(covered_w - 1);
            let i = sy * (w + 1) + sx;
            out[y * w + x] = sum[i] / cnt[i] as f64;
        }
    }
    out
}

/// Pixel-level ROC with "manipulated" declared where Δ falls below the threshold.
pub fn pixel_roc(delta: &CorrelationMap, truth: &Mask) -> Result<RocCurve> {
    pixel_roc_pooled(&[(delta, truth)])
}

/// Pixel-level ROC over the union of all pixels of several images.
pub fn pixel_roc_pooled(items: &[(&CorrelationMap, &Mask)]) -> Result<RocCurve> {
    let mut set = ScoreSet::default();
    for (delta, truth) in items {
        let g = delta.grid;
        if (truth.width, truth.height) != (g.image_width, g.image_height) {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} vs image {}x{}",
                truth.width, truth.height, g.image_width, g.image_height
            )));
        }
        for (v, &m) in pixel_values(delta).into_iter().zip(&truth.data) {
            if m {
                set.h1.push(-v)
            } else {
                set.h0.push(-v)
            }
        }
    }
    if set.h1.is_empty() || set.h0.is_empty() {
        return Err(Error::Empty(
            "mask must contain manipulated and pristine pixels".into(),
        ));
    }
    roc(&set)
}

/// Pixel heatmap with Δ in [−1, 1] mapped linearly onto 0..255.
pub fn write_heatmap_pgm(delta: &CorrelationMap, path: impl AsRef<Path>) -> Result<()> {
    let g = delta.grid;
    let pixels: Vec<u8> = pixel_values(delta)
        .into_iter()
        .map(|v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8)
        .collect();
    write_gray_pgm(&pixels, g.image_width, g.image_height, path.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::pairwise_auc;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fv(a: f64, b: f64, c: f64, d: f64) -> FeatureVector {
        FeatureVector {
            mean_intensity: a,
            texture: b,
            saturation_fraction: c,
            edge_energy: d,
        }
    }

    #[test]
    fn grid_geometry() {
        let g = WindowGrid::new(128, 128, 64, 64).unwrap();
        assert_eq!((g.cols, g.rows), (2, 2));
        assert_eq!(g.rect(3), Rect::new(64, 64, 64, 64));
        let g = WindowGrid::new(512, 512, 64, 8).unwrap();
        assert_eq!((g.cols, g.rows), (57, 57));
        assert!(WindowGrid::new(32, 128, 64, 8).is_err());
    }

    #[test]
    fn degenerate_windows_are_flagged() {
        let mut data = vec![0.0f32; 128 * 64];
        for (i, v) in data.iter_mut().enumerate() {
            if i % 128 >= 64 {
                *v = ((i * 13) % 7) as f32;
            }
        }
        let w = NoiseResidual::new(128, 64, data.clone()).unwrap();
        let map =
            sliding_corr_residual(&w, &data, WindowGrid::new(128, 64, 64, 64).unwrap()).unwrap();
        assert_eq!(map.degenerate, vec![true, false]);
        assert_eq!(map.values[0], 0.0);
        assert!((map.values[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_window_features() {
        let img = Image::filled(16, 16, 128.0).unwrap();
        let f = window_features(&img, Rect::new(0, 0, 16, 16)).unwrap();
        assert_eq!(f, fv(128.0, 1.0, 0.0, 0.0));
        let white = Image::filled(8, 8, 255.0).unwrap();
        assert_eq!(
            window_features(&white, Rect::new(0, 0, 8, 8))
                .unwrap()
                .saturation_fraction,
            1.0
        );
    }

    #[test]
    fn checkerboard_features() {
        let data = (0..32 * 32)
            .map(|i| {
                if (i % 32 + i / 32) % 2 == 0 {
                    0.0
                } else {
                    255.0
                }
            })
            .collect();
        let img = Image::new(32, 32, data).unwrap();
        let f = window_features(&img, Rect::new(0, 0, 32, 32)).unwrap();
        assert!(f.edge_energy > 400.0);
        // Any 5x5 window or border-clipped part of it has variance near 255²/4.
        assert!(f.texture < 1e-3, "{}", f.texture);
    }

    #[test]
    fn grid_features_match_single_window() {
        let img = Image::new(40, 30, (0..1200).map(|i| ((i * 37) % 256) as f32).collect()).unwrap();
        let g = WindowGrid::new(40, 30, 16, 7).unwrap();
        let all = extract_features(&img, g).unwrap();
        for i in [0, 3, g.len() - 1] {
            let one = window_features(&img, g.rect(i)).unwrap();
            for (a, b) in all[i].to_array().iter().zip(one.to_array()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    fn random_features(n: usize, seed: u64) -> Vec<FeatureVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                fv(
                    rng.random_range(0.0..255.0),
                    rng.random(),
                    rng.random_range(0.0..0.3),
                    rng.random_range(0.0..50.0),
                )
            })
            .collect()
    }

    #[test]
    fn exact_linear_target_is_recovered() {
        let f = random_features(50, 1);
        let truth = [0.002, -0.3, 0.5, -0.004, 0.12];
        let rho: Vec<f64> = f
            .iter()
            .map(|v| {
                v.to_array()
                    .iter()
                    .zip(&truth)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + truth[4]
            })
            .collect();
        let m = fit_predictor(&f, &rho).unwrap();
        for (a, b) in m.weights.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-6, "{:?}", m.weights);
        }
        assert!(m.rms < 1e-9);
    }

    #[test]
    fn constant_target_gives_bias_only() {
        let f = random_features(20, 2);
        let m = fit_predictor(&f, &[0.3; 20]).unwrap();
        assert!(m.weights[..4].iter().all(|w| w.abs() < 1e-12));
        assert!((m.bias() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn residuals_are_orthogonal_to_features() {
        let f = random_features(200, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rho: Vec<f64> = f
            .iter()
            .map(|v| 0.001 * v.mean_intensity + rng.random_range(-0.1..0.1))
            .collect();
        let m = fit_predictor(&f, &rho).unwrap();
        let res: Vec<f64> = f
            .iter()
            .zip(&rho)
            .map(|(v, y)| y - m.predict_one(v))
            .collect();
        let rn = res.iter().map(|r| r * r).sum::<f64>().sqrt();
        for j in 0..4 {
            let col: Vec<f64> = f.iter().map(|v| v.to_array()[j]).collect();
            let dot: f64 = col.iter().zip(&res).map(|(a, b)| a * b).sum();
            let cn = col.iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!(dot.abs() <= 1e-6 * cn * rn, "feature {j}: {dot}");
        }
    }

    #[test]
    fn collinear_features_use_ridge() {
        let f: Vec<FeatureVector> = (0..10)
            .map(|i| fv(i as f64, 2.0 * i as f64, 0.0, 1.0))
            .collect();
        let rho: Vec<f64> = (0..10).map(|i| 0.1 * i as f64).collect();
        let m = fit_predictor(&f, &rho).unwrap();
        assert!(m.rms < 1e-3);
        assert!(fit_predictor(&f[..4], &rho[..4]).is_err());
    }

    fn map(values: Vec<f64>, grid: WindowGrid) -> CorrelationMap {
        CorrelationMap::new(grid, values).unwrap()
    }

    #[test]
    fn delta_is_exact_subtraction() {
        let g = WindowGrid::new(128, 128, 64, 32).unwrap();
        let a = map((0..9).map(|i| i as f64 * 0.1).collect(), g);
        let b = map((0..9).map(|i| 0.5 - i as f64 * 0.05).collect(), g);
        let ab = delta_map(&a, &b).unwrap();
        let ba = delta_map(&b, &a).unwrap();
        for (x, y) in ab.values.iter().zip(&ba.values) {
            assert_eq!(*x, -*y);
        }
        assert!(delta_map(&a, &a).unwrap().values.iter().all(|&v| v == 0.0));
        let other = map(vec![0.0; 4], WindowGrid::new(128, 128, 64, 64).unwrap());
        assert!(delta_map(&a, &other).is_err());
    }

    #[test]
    fn pixel_values_are_coverage_means() {
        let g = WindowGrid::new(6, 4, 4, 2).unwrap();
        let m = map(vec![1.0, 3.0], g);
        let p = pixel_values(&m);
        assert_eq!(&p[..6], &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let g = WindowGrid::new(7, 4, 4, 2).unwrap();
        let p = pixel_values(&map(vec![1.0, 3.0], g));
        assert_eq!(p[6], p[5]);
    }

    #[test]
    fn perfect_separation_gives_unit_auc() {
        let g = WindowGrid::new(64, 64, 16, 16).unwrap();
        let rect = Rect::new(0, 0, 32, 64);
        let mask = Mask::from_rect(64, 64, rect);
        let values = (0..g.len())
            .map(|i| if g.rect(i).top < 32 { -1.0 } else { 1.0 })
            .collect();
        assert_eq!(pixel_roc(&map(values, g), &mask).unwrap().auc, 1.0);
        assert!(pixel_roc(&map(vec![0.0; 16], g), &Mask::empty(64, 64)).is_err());
    }

    #[test]
    fn random_delta_gives_chance_auc() {
        let g = WindowGrid::new(128, 128, 32, 8).unwrap();
        let mask = Mask::from_rect(128, 128, Rect::new(32, 32, 64, 64));
        let mut aucs = vec![];
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            aucs.push(pixel_roc(&map(v, g), &mask).unwrap().auc);
        }
        let mean = aucs.iter().sum::<f64>() / 20.0;
        assert!((mean - 0.5).abs() < 0.05, "{mean}");
    }

    #[test]
    fn heatmap_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let g = WindowGrid::new(16, 8, 8, 8).unwrap();
        let path = dir.path().join("h.pgm");
        write_heatmap_pgm(&map(vec![-1.0, 1.0], g), &path).unwrap();
        let img = crate::image::load_image(&path).unwrap();
        assert_eq!(img.get(0, 0), 0.0);
        assert_eq!(img.get(15, 7), 255.0);
    }

    proptest! {
        #[test]
        fn pixel_auc_matches_pairwise(
            vals in prop::collection::vec(-4i32..4, 16),
            top in 0usize..24, left in 0usize..24, size in 4usize..8,
        ) {
            let g = WindowGrid::new(32, 32, 8, 8).unwrap();
            let m = map(vals.iter().map(|&v| v as f64 * 0.25).collect(), g);
            let mask = Mask::from_rect(32, 32, Rect::new(top, left, size, size));
            let px = pixel_values(&m);
            let mut set = ScoreSet::default();
            for (v, &t) in px.iter().zip(&mask.data) {
                if t { set.h1.push(-v) } else { set.h0.push(-v) }
            }
            prop_assert_eq!(pixel_roc(&m, &mask).unwrap().auc, pairwise_auc(&set).unwrap());
        }
    }
}
