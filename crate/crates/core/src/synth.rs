//! Synthetic camera following `x = clamp(x_o(1+k) + θ, 0, 255)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::denoise::gaussian_blur;
use crate::error::{Error, Result};
use crate::fingerprint::zero_mean_rows_cols;
use crate::image::Image;
use crate::raster::{derive_seed, Mask, Rect};
use crate::signal::{Fingerprint, FingerprintKind};

const STREAM_SCENE: u64 = 1;
const STREAM_THETA: u64 = 2;
const STREAM_FOREIGN_K: u64 = 3;

/// Ground-truth PRNU plus additive noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCamera {
    pub k: Fingerprint,
    pub theta_sigma: f64,
    pub seed: u64,
}

impl SyntheticCamera {
    /// A camera with a fresh PRNU field of the given strength.
    pub fn generate(
        width: usize,
        height: usize,
        strength: f64,
        theta_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(theta_sigma >= 0.0 && theta_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "theta_sigma {theta_sigma} must be >= 0"
            )));
        }
        Ok(SyntheticCamera {
            k: gen_prnu(width, height, strength, seed)?,
            theta_sigma,
            seed,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.k.dims()
    }
}

/// Noise-free scene content `x_o`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SceneModel {
    Flat {
        level: f64,
    },
    /// Horizontal ramp from `from` at the left edge to `to` at the right edge.
    Gradient {
        from: f64,
        to: f64,
    },
    /// Value-noise octaves around `base`, peak deviation about `amplitude`.
    Texture {
        octaves: u32,
        amplitude: f64,
        base: f64,
    },
}

/// I.i.d. Gaussian PRNU with row and column means removed.
pub fn gen_prnu(width: usize, height: usize, strength: f64, seed: u64) -> Result<Fingerprint> {
    if !(strength > 0.0 && strength <= 0.1) {
        return Err(Error::InvalidConfig(format!(
            "prnu strength {strength} outside (0, 0.1]"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::TooSmall(format!("prnu field {width}x{height}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, strength).expect("valid std");
    let mut data: Vec<f64> = (0..width * height)
        .map(|_| normal.sample(&mut rng))
        .collect();
    zero_mean_rows_cols(&mut data, width, height);
    Fingerprint::new(
        width,
        height,
        data.into_iter().map(|v| v as f32).collect(),
        FingerprintKind::GroundTruth,
    )
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// One octave of lattice value noise in [-1, 1].
fn value_noise(width: usize, height: usize, cell: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gw = width / cell + 2;
    let gh = height / cell + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let gy = y / cell;
        let ty = smoothstep((y % cell) as f64 / cell as f64);
        for x in 0..width {
            let gx = x / cell;
            let tx = smoothstep((x % cell) as f64 / cell as f64);
            let at = |i: usize, j: usize| lattice[j * gw + i];
            let top = at(gx, gy) * (1.0 - tx) + at(gx + 1, gy) * tx;
            let bottom = at(gx, gy + 1) * (1.0 - tx) + at(gx + 1, gy + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Renders `x_o`; every value lies in [0, 255].
pub fn render_scene(scene: &SceneModel, width: usize, height: usize, seed: u64) -> Result<Image> {
    if width == 0 || height == 0 {
        return Err(Error::TooSmall(format!("scene {width}x{height}")));
    }
    let data: Vec<f64> = match *scene {
        SceneModel::Flat { level } => vec![level; width * height],
        SceneModel::Gradient { from, to } => {
            let span = (width.max(2) - 1) as f64;
            (0..height)
                .flat_map(|_| (0..width).map(move |x| from + (to - from) * x as f64 / span))
                .collect()
        }
        SceneModel::Texture {
            octaves,
            amplitude,
            base,
        } => {
            if octaves == 0 {
                return Err(Error::InvalidConfig(
                    "texture needs at least one octave".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut acc = vec![0.0; width * height];
            let mut cell = 64usize;
            let mut weight = 1.0;
            let mut total = 0.0;
            for _ in 0..octaves {
                for (a, v) in acc
                    .iter_mut()
                    .zip(value_noise(width, height, cell, &mut rng))
                {
                    *a += weight * v;
                }
                total += weight;
                weight *= 0.5;
                cell = (cell / 2).max(2);
            }
            acc.into_iter()
                .map(|v| base + amplitude * v / total)
                .collect()
        }
    };
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "scene {scene:?} is not finite"
        )));
    }
    Image::from_clamped(width, height, data.into_iter().map(|v| v as f32).collect())
}

/// Passes a clean scene through the sensor.
pub fn expose(clean: &Image, cam: &SyntheticCamera, seed: u64) -> Result<Image> {
    if clean.dims() != cam.dims() {
        return Err(Error::DimensionMismatch(format!(
            "scene {:?} vs sensor {:?}",
            clean.dims(),
            cam.dims()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise =
        (cam.theta_sigma > 0.0).then(|| Normal::new(0.0, cam.theta_sigma).expect("valid std"));
    let data = clean
        .data()
        .iter()
        .zip(cam.k.data())
        .map(|(&xo, &k)| {
            let theta = noise.map_or(0.0, |n| n.sample(&mut rng));
            (xo as f64 * (1.0 + k as f64) + theta) as f32
        })
        .collect();
    Image::from_clamped(clean.width(), clean.height(), data)
}

/// Renders a scene and exposes it; deterministic in `(scene, cam, seed)`.
pub fn synthesize(scene: &SceneModel, cam: &SyntheticCamera, seed: u64) -> Result<Image> {
    let (w, h) = cam.dims();
    let clean = render_scene(scene, w, h, derive_seed(seed, STREAM_SCENE))?;
    expose(&clean, cam, derive_seed(seed, STREAM_THETA))
}

/// How a tampered region is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TamperMode {
    /// Content re-exposed through an unrelated sensor.
    ForeignCamera {
        strength: f64,
        theta_sigma: f64,
        seed: u64,
    },
    /// The region's own content, blurred; removes the local PRNU.
    Smooth { sigma: f64 },
}

/// Replaces `rect` and returns the ground-truth mask.
pub fn inject_tamper(img: &Image, rect: Rect, mode: TamperMode) -> Result<(Image, Mask)> {
    let (w, h) = img.dims();
    rect.check(w, h)?;
    let mask = Mask::from_rect(w, h, rect);
    if rect.area() == 0 {
        return Ok((img.clone(), mask));
    }
    let patch = img.crop(rect)?;
    let replaced = match mode {
        TamperMode::ForeignCamera {
            strength,
            theta_sigma,
            seed,
        } => {
            // Approximate the scene by the blurred patch; the weak host PRNU left in it is negligible.
            let clean = gaussian_blur(&patch, 2.0);
            let foreign = SyntheticCamera::generate(
                rect.width,
                rect.height,
                strength,
                theta_sigma,
                derive_seed(seed, STREAM_FOREIGN_K),
            )?;
            expose(&clean, &foreign, derive_seed(seed, STREAM_THETA))?
        }
        TamperMode::Smooth { sigma } => {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "blur sigma {sigma} must be > 0"
                )));
            }
            gaussian_blur(&patch, sigma)
        }
    };
    let mut data = img.data().to_vec();
    for y in 0..rect.height {
        let dst = (rect.top + y) * w + rect.left;
        data[dst..dst + rect.width]
            .copy_from_slice(&replaced.data()[y * rect.width..(y + 1) * rect.width]);
    }
    Ok((Image::with_origin(w, h, data, img.origin())?, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::mean_std;

    #[test]
    fn prnu_is_deterministic_and_zero_mean() {
        let a = gen_prnu(32, 16, 0.03, 7).unwrap();
        assert_eq!(a, gen_prnu(32, 16, 0.03, 7).unwrap());
        assert_ne!(a, gen_prnu(32, 16, 0.03, 8).unwrap());
        assert_eq!(a.kind(), FingerprintKind::GroundTruth);
        assert!(mean_std(a.data()).0.abs() < 1e-6);
    }

    #[test]
    fn prnu_std_matches_strength() {
        let k = gen_prnu(256, 256, 0.02, 11).unwrap();
        let (_, std) = mean_std(k.data());
        assert!((0.018..=0.022).contains(&std), "{std}");
    }

    #[test]
    fn prnu_1x1_is_zero() {
        assert_eq!(gen_prnu(1, 1, 0.05, 3).unwrap().data(), &[0.0]);
    }

    #[test]
    fn prnu_rejects_bad_strength() {
        assert!(gen_prnu(4, 4, 0.0, 1).is_err());
        assert!(gen_prnu(4, 4, 0.2, 1).is_err());
        assert!(gen_prnu(0, 4, 0.01, 1).is_err());
    }

    #[test]
    fn identity_camera_reproduces_scene() {
        let cam = SyntheticCamera {
            k: Fingerprint::zeros(16, 16, FingerprintKind::GroundTruth),
            theta_sigma: 0.0,
            seed: 0,
        };
        let scene = SceneModel::Texture {
            octaves: 3,
            amplitude: 60.0,
            base: 120.0,
        };
        let clean = render_scene(&scene, 16, 16, derive_seed(5, STREAM_SCENE)).unwrap();
        assert_eq!(synthesize(&scene, &cam, 5).unwrap(), clean);
    }

    #[test]
    fn single_pixel_prnu_scales_flat_level() {
        let mut k = vec![0.0f32; 9];
        k[4] = 0.05;
        let cam = SyntheticCamera {
            k: Fingerprint::new(3, 3, k, FingerprintKind::GroundTruth).unwrap(),
            theta_sigma: 0.0,
            seed: 0,
        };
        let x = synthesize(&SceneModel::Flat { level: 100.0 }, &cam, 1).unwrap();
        assert!((x.get(1, 1) - 105.0).abs() < 1e-4);
        assert_eq!(x.get(0, 0), 100.0);
    }

    #[test]
    fn noiseless_exposure_gives_k_as_relative_change() {
        let cam = SyntheticCamera::generate(24, 24, 0.05, 0.0, 9).unwrap();
        let scene = SceneModel::Gradient {
            from: 20.0,
            to: 200.0,
        };
        let clean = render_scene(&scene, 24, 24, derive_seed(2, STREAM_SCENE)).unwrap();
        let x = synthesize(&scene, &cam, 2).unwrap();
        for i in 0..clean.data().len() {
            let xo = clean.data()[i] as f64;
            let rel = (x.data()[i] as f64 - xo) / xo;
            assert!((rel - cam.k.data()[i] as f64).abs() < 1e-5);
        }
    }

    #[test]
    fn synthesize_is_deterministic() {
        let cam = SyntheticCamera::generate(20, 12, 0.02, 2.0, 1).unwrap();
        let scene = SceneModel::Texture {
            octaves: 4,
            amplitude: 40.0,
            base: 128.0,
        };
        assert_eq!(
            synthesize(&scene, &cam, 3).unwrap(),
            synthesize(&scene, &cam, 3).unwrap()
        );
        assert_ne!(
            synthesize(&scene, &cam, 3).unwrap(),
            synthesize(&scene, &cam, 4).unwrap()
        );
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let cam = SyntheticCamera::generate(8, 8, 0.02, 1.0, 1).unwrap();
        let img = Image::filled(8, 9, 10.0).unwrap();
        assert!(matches!(
            expose(&img, &cam, 0),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn scenes_stay_in_range() {
        for scene in [
            SceneModel::Flat { level: 300.0 },
            SceneModel::Gradient {
                from: -50.0,
                to: 400.0,
            },
            SceneModel::Texture {
                octaves: 5,
                amplitude: 500.0,
                base: 128.0,
            },
        ] {
            let img = render_scene(&scene, 33, 17, 4).unwrap();
            assert!(img.data().iter().all(|v| (0.0..=255.0).contains(v)));
        }
    }

    #[test]
    fn bright_scenes_saturate() {
        let cam = SyntheticCamera::generate(16, 16, 0.05, 3.0, 1).unwrap();
        let x = synthesize(&SceneModel::Flat { level: 250.0 }, &cam, 0).unwrap();
        assert!(x.data().contains(&255.0));
    }

    #[test]
    fn tamper_mask_and_bounds() {
        let img = Image::filled(32, 32, 100.0).unwrap();
        let rect = Rect::new(4, 8, 10, 12);
        let (out, mask) = inject_tamper(&img, rect, TamperMode::Smooth { sigma: 1.5 }).unwrap();
        assert_eq!(mask.count(), rect.area());
        assert_eq!(out.dims(), img.dims());
        assert!(inject_tamper(
            &img,
            Rect::new(30, 30, 4, 4),
            TamperMode::Smooth { sigma: 1.0 }
        )
        .is_err());
        let (same, empty) = inject_tamper(
            &img,
            Rect::new(3, 3, 0, 5),
            TamperMode::Smooth { sigma: 1.0 },
        )
        .unwrap();
        assert_eq!(same, img);
        assert_eq!(empty.count(), 0);
    }

    #[test]
    fn foreign_tamper_changes_only_the_region() {
        let cam = SyntheticCamera::generate(48, 48, 0.03, 1.0, 2).unwrap();
        let img = synthesize(&SceneModel::Flat { level: 128.0 }, &cam, 1).unwrap();
        let rect = Rect::new(10, 12, 20, 16);
        let mode = TamperMode::ForeignCamera {
            strength: 0.03,
            theta_sigma: 1.0,
            seed: 99,
        };
        let (out, mask) = inject_tamper(&img, rect, mode).unwrap();
        for i in 0..out.data().len() {
            if !mask.data[i] {
                assert_eq!(out.data()[i], img.data()[i]);
            }
        }
        assert_ne!(out, img);
    }
}
