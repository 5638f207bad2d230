//! Similarity scores, the H0/H1 decision and ROC evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fft::circular_xcorr;
use crate::image::Image;
use crate::signal::{Fingerprint, NoiseResidual};

/// Neighbourhood radius around the peak excluded from the PCE energy.
pub const PCE_EXCLUSION_RADIUS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScoreKind {
    Ncc,
    Pce,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Ncc => "ncc",
            ScoreKind::Pce => "pce",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityScore {
    pub value: f64,
    pub kind: ScoreKind,
    /// `(dy, dx)` of the correlation peak; PCE only.
    pub peak_offset: Option<(isize, isize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    H0,
    H1,
}

/// What the residual is correlated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reference {
    /// The fingerprint itself.
    #[default]
    Plain,
    /// The fingerprint multiplied by the probe intensities.
    Modulated,
}

impl Reference {
    /// Builds the template for `probe`.
    pub fn template(self, fp: &Fingerprint, probe: &Image) -> Result<Vec<f32>> {
        match self {
            Reference::Plain => {
                if fp.dims() != probe.dims() {
                    return Err(dims_error(fp.dims(), probe.dims()));
                }
                Ok(fp.data().to_vec())
            }
            Reference::Modulated => Ok(modulate(fp, probe)?.into_data()),
        }
    }
}

fn dims_error(a: (usize, usize), b: (usize, usize)) -> Error {
    Error::DimensionMismatch(format!("{}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

fn centered(v: &[f32]) -> Vec<f64> {
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len().max(1) as f64;
    v.iter().map(|&x| x as f64 - mean).collect()
}

fn energy(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Pearson correlation of two equally long signals.
pub fn ncc_values(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} samples",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Empty("no samples to correlate".into()));
    }
    let (ca, cb) = (centered(a), centered(b));
    let (ea, eb) = (energy(&ca), energy(&cb));
    if !(ea.is_finite() && eb.is_finite()) {
        return Err(Error::NonFinite("correlation input".into()));
    }
    if ea == 0.0 || eb == 0.0 {
        return Err(Error::Degenerate("zero-variance signal".into()));
    }
    let dot: f64 = ca.iter().zip(&cb).map(|(x, y)| x * y).sum();
    Ok((dot / (ea.sqrt() * eb.sqrt())).clamp(-1.0, 1.0))
}

pub fn ncc(w: &NoiseResidual, template: &[f32]) -> Result<SimilarityScore> {
    Ok(SimilarityScore {
        value: ncc_values(w.data(), template)?,
        kind: ScoreKind::Ncc,
        peak_offset: None,
    })
}

/// Template `k̂·y`.
pub fn modulate(fp: &Fingerprint, probe: &Image) -> Result<Fingerprint> {
    if fp.dims() != probe.dims() {
        return Err(dims_error(fp.dims(), probe.dims()));
    }
    let data = fp
        .data()
        .iter()
        .zip(probe.data())
        .map(|(k, y)| k * y)
        .collect();
    Fingerprint::new(fp.width(), fp.height(), data, fp.kind())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PceSearch {
    /// Peak taken at zero displacement.
    #[default]
    None,
    /// Peak taken at the surface maximum over all circular shifts.
    FullTranslation,
}

fn signed_offset(s: usize, n: usize) -> isize {
    if s > n / 2 {
        s as isize - n as isize
    } else {
        s as isize
    }
}

/// Peak-to-correlation energy of the circular NCC surface.
pub fn pce(
    w: &NoiseResidual,
    template: &[f32],
    search: PceSearch,
    exclusion_radius: usize,
) -> Result<SimilarityScore> {
    let (width, height) = w.dims();
    if template.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "{} template samples for a {width}x{height} residual",
            template.len()
        )));
    }
    let (a, b) = (centered(w.data()), centered(template));
    let (ea, eb) = (energy(&a), energy(&b));
    if !(ea.is_finite() && eb.is_finite()) {
        return Err(Error::NonFinite("pce input".into()));
    }
    if ea == 0.0 || eb == 0.0 {
        return Err(Error::Degenerate("zero-variance signal".into()));
    }
    let norm = (ea * eb).sqrt();
    let surface: Vec<f64> = circular_xcorr(&a, &b, width, height)
        .into_iter()
        .map(|v| v / norm)
        .collect();
    let peak_idx = match search {
        PceSearch::None => 0,
        PceSearch::FullTranslation => {
            surface
                .iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > surface[best] { i } else { best })
        }
    };
    let (px, py) = (peak_idx % width, peak_idx / width);
    let near = |d: usize, n: usize| {
        let d = d.min(n - d);
        d <= exclusion_radius
    };
    let (mut sum, mut count) = (0.0, 0usize);
    for y in 0..height {
        let dy = (y + height - py) % height;
        for x in 0..width {
            let dx = (x + width - px) % width;
            if near(dy, height) && near(dx, width) {
                continue;
            }
            sum += surface[y * width + x].powi(2);
            count += 1;
        }
    }
    if count == 0 || sum == 0.0 {
        return Err(Error::Degenerate(format!(
            "{width}x{height} surface leaves no energy outside the peak neighbourhood"
        )));
    }
    let peak = surface[peak_idx];
    Ok(SimilarityScore {
        value: peak.signum() * peak * peak / (sum / count as f64),
        kind: ScoreKind::Pce,
        peak_offset: Some((signed_offset(py, height), signed_offset(px, width))),
    })
}

/// H1 iff the score strictly exceeds `tau`.
pub fn decide(score: f64, tau: f64) -> Hypothesis {
    if score > tau {
        Hypothesis::H1
    } else {
        Hypothesis::H0
    }
}

/// Smallest observed H0 score whose strict exceedance rate is at most `fpr`.
pub fn threshold_for_fpr(h0: &[f64], fpr: f64) -> Result<f64> {
    if h0.is_empty() {
        return Err(Error::Empty("no H0 scores".into()));
    }
    if !(0.0..=1.0).contains(&fpr) {
        return Err(Error::InvalidConfig(format!(
            "target fpr {fpr} outside [0, 1]"
        )));
    }
    check_finite(h0)?;
    let mut sorted = h0.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let idx = ((fpr * sorted.len() as f64).floor() as usize).min(sorted.len() - 1);
    Ok(sorted[idx])
}

fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().find(|x| !x.is_finite()) {
        Some(x) => Err(Error::NonFinite(format!("score {x}"))),
        None => Ok(()),
    }
}

/// Labeled scores of one evaluation cell.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    pub h1: Vec<f64>,
    pub h0: Vec<f64>,
    pub camera_id: String,
    pub extractor: String,
    pub patch: (usize, usize),
}

impl ScoreSet {
    pub fn new(h1: Vec<f64>, h0: Vec<f64>) -> Self {
        ScoreSet {
            h1,
            h0,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Threshold sweep over all observed scores, larger score = more likely H1.
pub fn roc(set: &ScoreSet) -> Result<RocCurve> {
    if set.h1.is_empty() || set.h0.is_empty() {
        return Err(Error::Empty(format!(
            "roc needs both classes (h1 {}, h0 {})",
            set.h1.len(),
            set.h0.len()
        )));
    }
    check_finite(&set.h1)?;
    check_finite(&set.h0)?;
    let mut all: Vec<(f64, bool)> = set
        .h1
        .iter()
        .map(|&v| (v, true))
        .chain(set.h0.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (n1, n0) = (set.h1.len() as u128, set.h0.len() as u128);
    let (mut tp, mut fp) = (0u128, 0u128);
    let mut twice_area = 0u128;
    let mut points = vec![(0.0, 0.0)];
    let mut i = 0;
    while i < all.len() {
        let (prev_tp, prev_fp) = (tp, fp);
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                tp += 1
            } else {
                fp += 1
            }
            i += 1;
        }
        twice_area += (fp - prev_fp) * (tp + prev_tp);
        points.push((fp as f64 / n0 as f64, tp as f64 / n1 as f64));
    }
    Ok(RocCurve {
        points,
        auc: twice_area as f64 / (2 * n1 * n0) as f64,
    })
}

/// Pairwise win fraction with half credit for ties.
pub fn pairwise_auc(set: &ScoreSet) -> Result<f64> {
    if set.h1.is_empty() || set.h0.is_empty() {
        return Err(Error::Empty("pairwise auc needs both classes".into()));
    }
    let mut twice = 0u128;
    for &a in &set.h1 {
        for &b in &set.h0 {
            twice += match a.partial_cmp(&b) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    Ok(twice as f64 / (2 * set.h1.len() as u128 * set.h0.len() as u128) as f64)
}

/// Median with the mean-of-middle-two convention.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("median of nothing".into()));
    }
    check_finite(values)?;
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Ok(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// H1 medians keyed by camera (rows) and extractor (columns).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MedianTable {
    pub cells: BTreeMap<(String, String), f64>,
}

impl MedianTable {
    pub fn rows(&self) -> Vec<&str> {
        let mut r: Vec<&str> = self.cells.keys().map(|(c, _)| c.as_str()).collect();
        r.dedup();
        r
    }

    pub fn columns(&self) -> Vec<&str> {
        let mut c: Vec<&str> = self.cells.keys().map(|(_, e)| e.as_str()).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn get(&self, camera: &str, extractor: &str) -> Option<f64> {
        self.cells
            .get(&(camera.to_string(), extractor.to_string()))
            .copied()
    }

    /// CSV with a `camera` column followed by one column per extractor.
    pub fn to_csv(&self) -> String {
        let cols = self.columns();
        let mut out = String::from("camera");
        for c in &cols {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for r in self.rows() {
            out.push_str(r);
            for c in &cols {
                match self.get(r, c) {
                    Some(v) => {
                        let _ = write!(out, ",{v:.4}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn median_table(sets: &[ScoreSet]) -> Result<MedianTable> {
    let mut table = MedianTable::default();
    for s in sets {
        let key = (s.camera_id.clone(), s.extractor.clone());
        table.cells.insert(key, median(&s.h1)?);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::FingerprintKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noise(n: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect()
    }

    fn residual(w: usize, h: usize, data: Vec<f32>) -> NoiseResidual {
        NoiseResidual::new(w, h, data).unwrap()
    }

    #[test]
    fn ncc_basic_values() {
        let v = [1.0, 2.5, -3.0, 0.25];
        assert!((ncc_values(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f32> = v.iter().map(|x| -x).collect();
        assert!((ncc_values(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(
            ncc_values(&[1.0, -1.0, 0.0], &[1.0, 1.0, -2.0]).unwrap(),
            0.0
        );
    }

    #[test]
    fn ncc_rejects_degenerate_input() {
        assert!(matches!(
            ncc_values(&[2.0; 4], &[1.0, 2.0, 3.0, 4.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            ncc_values(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn modulation_examples() {
        let fp = Fingerprint::new(
            2,
            2,
            vec![0.1, -0.2, 0.3, 0.0],
            FingerprintKind::MleEstimate,
        )
        .unwrap();
        let ones = Image::filled(2, 2, 1.0).unwrap();
        assert_eq!(modulate(&fp, &ones).unwrap().data(), fp.data());
        let zero = Image::filled(2, 2, 0.0).unwrap();
        let t = modulate(&fp, &zero).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
        assert!(matches!(
            ncc_values(&[1.0, 2.0, 0.0, 1.0], t.data()),
            Err(Error::Degenerate(_))
        ));
        let other = Image::filled(3, 2, 1.0).unwrap();
        assert!(modulate(&fp, &other).is_err());
    }

    #[test]
    fn pce_self_match_is_large() {
        let v = noise(64 * 64, 1);
        let s = pce(
            &residual(64, 64, v.clone()),
            &v,
            PceSearch::None,
            PCE_EXCLUSION_RADIUS,
        )
        .unwrap();
        assert!(s.value > 1000.0, "{}", s.value);
        assert_eq!(s.peak_offset, Some((0, 0)));
    }

    #[test]
    fn pce_recovers_circular_shift() {
        let (w, h) = (64, 64);
        let fp = noise(w * h, 2);
        let mut shifted = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                shifted[((y + 3) % h) * w + (x + 7) % w] = fp[y * w + x];
            }
        }
        let s = pce(&residual(w, h, shifted), &fp, PceSearch::FullTranslation, 5).unwrap();
        assert_eq!(s.peak_offset, Some((3, 7)));
        assert!(s.value > 1000.0);
    }

    #[test]
    fn pce_null_is_small() {
        let mut below = 0;
        for seed in 0..100 {
            let a = noise(64 * 64, 1000 + seed);
            let b = noise(64 * 64, 5000 + seed);
            let s = pce(&residual(64, 64, a), &b, PceSearch::None, 5).unwrap();
            below += (s.value < 20.0) as usize;
        }
        assert!(below >= 99);
    }

    #[test]
    fn pce_is_invariant_under_joint_shift() {
        let (w, h) = (32, 24);
        let a = noise(w * h, 3);
        let b: Vec<f32> = a
            .iter()
            .zip(noise(w * h, 4))
            .map(|(x, n)| 0.3 * x + n)
            .collect();
        let shift = |v: &[f32]| {
            let mut o = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    o[((y + 5) % h) * w + (x + 11) % w] = v[y * w + x];
                }
            }
            o
        };
        let p0 = pce(&residual(w, h, a.clone()), &b, PceSearch::None, 5)
            .unwrap()
            .value;
        let p1 = pce(&residual(w, h, shift(&a)), &shift(&b), PceSearch::None, 5)
            .unwrap()
            .value;
        assert!((p0 - p1).abs() <= 1e-9 * p0.abs());
    }

    #[test]
    fn anti_correlation_gives_negative_pce() {
        let v = noise(32 * 32, 5);
        let neg: Vec<f32> = v.iter().map(|x| -x).collect();
        assert!(
            pce(&residual(32, 32, v), &neg, PceSearch::None, 5)
                .unwrap()
                .value
                < -100.0
        );
    }

    #[test]
    fn decide_tie_and_monotonicity() {
        assert_eq!(decide(0.5, 0.1), Hypothesis::H1);
        assert_eq!(decide(0.1, 0.1), Hypothesis::H0);
        assert_eq!(decide(0.05, 0.1), Hypothesis::H0);
    }

    #[test]
    fn threshold_hits_target_fpr_on_fresh_draws() {
        let draw = |seed| -> Vec<f64> { noise(20_000, seed).into_iter().map(f64::from).collect() };
        let tau = threshold_for_fpr(&draw(10), 0.01).unwrap();
        let fresh = draw(11);
        let fpr = fresh
            .iter()
            .filter(|&&v| decide(v, tau) == Hypothesis::H1)
            .count() as f64
            / fresh.len() as f64;
        assert!((0.005..=0.02).contains(&fpr), "{fpr}");
    }

    #[test]
    fn roc_examples() {
        assert_eq!(
            roc(&ScoreSet::new(vec![0.9, 0.8], vec![0.85, 0.1]))
                .unwrap()
                .auc,
            0.75
        );
        assert_eq!(
            roc(&ScoreSet::new(vec![3.0, 4.0], vec![1.0, 2.0]))
                .unwrap()
                .auc,
            1.0
        );
        let same = vec![0.2, 0.5, 0.5, 0.9];
        assert_eq!(roc(&ScoreSet::new(same.clone(), same)).unwrap().auc, 0.5);
        assert!(matches!(
            roc(&ScoreSet::new(vec![], vec![1.0])),
            Err(Error::Empty(_))
        ));
        let curve = roc(&ScoreSet::new(vec![0.9, 0.8], vec![0.85, 0.1])).unwrap();
        assert_eq!(curve.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(curve.points.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&[0.075]).unwrap(), 0.075);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
        assert!(median(&[]).is_err());
    }

    #[test]
    fn median_table_layout() {
        let mut a = ScoreSet::new(vec![0.1, 0.3, 0.2], vec![0.0]);
        a.camera_id = "cam1".into();
        a.extractor = "wavelet".into();
        let mut b = a.clone();
        b.extractor = "spncnn".into();
        b.h1 = vec![0.4];
        let t = median_table(&[a, b]).unwrap();
        assert_eq!(t.get("cam1", "wavelet"), Some(0.2));
        assert_eq!(t.to_csv(), "camera,spncnn,wavelet\ncam1,0.4000,0.2000\n");
    }

    #[test]
    fn h0_median_is_near_zero() {
        let n = 100 * 100;
        let k = noise(n, 77);
        let scores: Vec<f64> = (0..51)
            .map(|s| ncc_values(&noise(n, 200 + s), &k).unwrap())
            .collect();
        assert!(median(&scores).unwrap().abs() < 3.0 / (n as f64).sqrt());
    }

    proptest! {
        #[test]
        fn roc_auc_equals_pairwise(
            h1 in prop::collection::vec(-20i32..20, 1..100),
            h0 in prop::collection::vec(-20i32..20, 1..100),
        ) {
            let set = ScoreSet::new(
                h1.iter().map(|&v| v as f64 / 4.0).collect(),
                h0.iter().map(|&v| v as f64 / 4.0).collect(),
            );
            prop_assert_eq!(roc(&set).unwrap().auc, pairwise_auc(&set).unwrap());
        }

        #[test]
        fn ncc_is_affine_invariant(
            a in prop::collection::vec(-10.0f32..10.0, 8..40),
            scale in prop::sample::select(vec![-3.0f32, -0.5, 0.25, 2.0]),
            shift in -5.0f32..5.0,
        ) {
            let b: Vec<f32> = a.iter().enumerate().map(|(i, x)| x.sin() + i as f32 * 0.1).collect();
            if let Ok(base) = ncc_values(&a, &b) {
                let t: Vec<f32> = a.iter().map(|x| scale * x + shift).collect();
                let r = ncc_values(&t, &b).unwrap();
                prop_assert!((r - scale.signum() as f64 * base).abs() < 1e-4);
            }
        }

        #[test]
        fn decide_is_monotone(score in -1.0f64..1.0, tau in -1.0f64..1.0, bump in 0.0f64..1.0) {
            if decide(score, tau) == Hypothesis::H0 {
                prop_assert_eq!(decide(score, tau + bump), Hypothesis::H0);
            }
        }
    }
}
