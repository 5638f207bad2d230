//! Oracle checks against the synthetic imaging model that need no training.

use spn_core::denoise::{residual, WaveletDenoiserConfig};
use spn_core::detect::{median, ncc_values, Reference};
use spn_core::fingerprint::{clean_nua, CleanOptions, MleAccumulator};
use spn_core::localize::{delta_map, extract_features, fit_predictor, pixel_values, sliding_corr};
use spn_core::spncnn::Extractor;
use spn_core::synth::{inject_tamper, synthesize, SceneModel, SyntheticCamera, TamperMode};
use spn_core::{Fingerprint, Image, Rect};

const FLAT: SceneModel = SceneModel::Flat { level: 128.0 };
const TEXTURE: SceneModel = SceneModel::Texture {
    octaves: 4,
    amplitude: 300.0,
    base: 128.0,
};

fn flat_field_estimate(cam: &SyntheticCamera, n: u64, seed0: u64) -> Fingerprint {
    let cfg = WaveletDenoiserConfig::default();
    let mut acc = MleAccumulator::new();
    for s in 0..n {
        let img = synthesize(&FLAT, cam, seed0 + s).unwrap();
        acc.absorb(&img, &residual(&img, &cfg).unwrap()).unwrap();
    }
    clean_nua(&acc.finalize().unwrap(), CleanOptions::default())
}

fn rank(v: &[f64]) -> Vec<f32> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    for (pos, &i) in idx.iter().enumerate() {
        r[i] = pos as f32;
    }
    r
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    ncc_values(&rank(x), &rank(y)).unwrap()
}

#[test]
fn mle_recovery_matches_golden() {
    let cam = SyntheticCamera::generate(256, 256, 0.02, 2.0, 1).unwrap();
    let khat = flat_field_estimate(&cam, 200, 0);
    let corr = ncc_values(khat.data(), cam.k.data()).unwrap();
    assert!(corr >= 0.95, "{corr}");
    assert!((corr - GOLDEN_MLE_CORR).abs() < 1e-9, "{corr:.12}");
}

const GOLDEN_MLE_CORR: f64 = 0.993681576306;

#[test]
fn fingerprint_quality_grows_with_image_count() {
    let cfg = WaveletDenoiserConfig::default();
    let grid = [5usize, 10, 50, 200];
    for seed in 0..5u64 {
        let cam = SyntheticCamera::generate(256, 256, 0.02, 2.0, 100 + seed).unwrap();
        let mut acc = MleAccumulator::new();
        let mut corr = vec![];
        for s in 0..*grid.last().unwrap() {
            let img = synthesize(&FLAT, &cam, seed * 1000 + s as u64).unwrap();
            acc.absorb(&img, &residual(&img, &cfg).unwrap()).unwrap();
            if grid.contains(&(s + 1)) {
                let k = clean_nua(&acc.finalize().unwrap(), CleanOptions::default());
                corr.push(ncc_values(k.data(), cam.k.data()).unwrap());
            }
        }
        let n: Vec<f64> = grid.iter().map(|&n| n as f64).collect();
        assert!(spearman(&n, &corr) >= 0.9, "seed {seed}: {corr:?}");
        assert!(corr[3] > corr[1], "seed {seed}: {corr:?}");
    }
}

#[test]
fn modulated_reference_beats_plain_in_median() {
    let cam = SyntheticCamera::generate(256, 256, 0.02, 1.0, 3).unwrap();
    let khat = flat_field_estimate(&cam, 30, 500);
    let scene = SceneModel::Texture {
        octaves: 4,
        amplitude: 60.0,
        base: 128.0,
    };
    let cfg = WaveletDenoiserConfig::default();
    let (mut plain, mut modulated) = (vec![], vec![]);
    for i in 0..100u64 {
        let img = synthesize(&scene, &cam, 20_000 + i).unwrap();
        let r = Rect::new(
            ((i * 37) % 156) as usize,
            ((i * 53) % 156) as usize,
            100,
            100,
        );
        let probe = img.crop(r).unwrap();
        let kc = khat.crop(r).unwrap();
        let w = residual(&probe, &cfg).unwrap();
        plain.push(ncc_values(w.data(), &Reference::Plain.template(&kc, &probe).unwrap()).unwrap());
        modulated.push(
            ncc_values(
                w.data(),
                &Reference::Modulated.template(&kc, &probe).unwrap(),
            )
            .unwrap(),
        );
    }
    let (p, m) = (median(&plain).unwrap(), median(&modulated).unwrap());
    assert!(m >= p, "modulated {m} vs plain {p}");
}

#[test]
fn full_image_foreign_tamper_drops_toward_null() {
    let cam = SyntheticCamera::generate(128, 128, 0.05, 1.0, 4).unwrap();
    let cfg = WaveletDenoiserConfig::default();
    let img = synthesize(
        &SceneModel::Texture {
            octaves: 4,
            amplitude: 60.0,
            base: 128.0,
        },
        &cam,
        7,
    )
    .unwrap();
    let score = |x: &Image| {
        let w = residual(x, &cfg).unwrap();
        ncc_values(w.data(), &Reference::Modulated.template(&cam.k, x).unwrap()).unwrap()
    };
    let before = score(&img);
    let mode = TamperMode::ForeignCamera {
        strength: 0.05,
        theta_sigma: 1.0,
        seed: 8,
    };
    let (tampered, mask) = inject_tamper(&img, Rect::full(128, 128), mode).unwrap();
    assert_eq!(mask.count(), 128 * 128);
    let after = score(&tampered);
    assert!(before > 0.3, "{before}");
    assert!(after.abs() < before / 10.0, "{before} -> {after}");
}

#[test]
fn localization_maps_follow_the_oracle() {
    let cam = SyntheticCamera::generate(256, 256, 0.05, 1.0, 5).unwrap();
    let khat = flat_field_estimate(&cam, 30, 900);
    let ex = Extractor::default();
    let (window, stride) = (64, 16);

    let (mut feats, mut rhos) = (vec![], vec![]);
    for s in 0..3u64 {
        let img = synthesize(&TEXTURE, &cam, 30_000 + s).unwrap();
        let m = sliding_corr(&img, &khat, &ex, window, stride).unwrap();
        feats.extend(extract_features(&img, m.grid).unwrap());
        rhos.extend(m.values);
    }
    let model = fit_predictor(&feats, &rhos).unwrap();

    let pristine = synthesize(&TEXTURE, &cam, 31_000).unwrap();
    let m = sliding_corr(&pristine, &khat, &ex, window, stride).unwrap();
    assert!(
        median(&m.values).unwrap() > 0.2,
        "pristine median {}",
        median(&m.values).unwrap()
    );
    let predicted = model
        .predict(&extract_features(&pristine, m.grid).unwrap(), m.grid)
        .unwrap();
    let err: f64 = m
        .values
        .iter()
        .zip(&predicted.values)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>();
    let rms = (err / m.values.len() as f64).sqrt();
    let mean = m.values.iter().sum::<f64>() / m.values.len() as f64;
    let std =
        (m.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m.values.len() as f64).sqrt();
    assert!(rms < std, "held-out rms {rms} vs std {std}");

    let foreign = |seed| TamperMode::ForeignCamera {
        strength: 0.05,
        theta_sigma: 1.0,
        seed,
    };
    let (full, _) = inject_tamper(&pristine, Rect::full(256, 256), foreign(1)).unwrap();
    let mf = sliding_corr(&full, &khat, &ex, window, stride).unwrap();
    assert!(
        median(&mf.values).unwrap().abs() < 0.05,
        "tampered median {}",
        median(&mf.values).unwrap()
    );

    let (tampered, mask) =
        inject_tamper(&pristine, Rect::new(64, 96, 128, 128), foreign(2)).unwrap();
    let mt = sliding_corr(&tampered, &khat, &ex, window, stride).unwrap();
    let pt = model
        .predict(&extract_features(&tampered, mt.grid).unwrap(), mt.grid)
        .unwrap();
    let px = pixel_values(&delta_map(&mt, &pt).unwrap());
    let (mut inside, mut outside) = (vec![], vec![]);
    for (v, &t) in px.iter().zip(&mask.data) {
        if t {
            inside.push(*v)
        } else {
            outside.push(*v)
        }
    }
    let (di, dout) = (median(&inside).unwrap(), median(&outside).unwrap());
    assert!(di < dout, "inside {di} vs outside {dout}");
}
