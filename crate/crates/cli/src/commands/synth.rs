use serde::Serialize;
use spn_core::container::save_fingerprint;
use spn_core::denoise::gaussian_blur;
use spn_core::image::{save_pgm, save_png};
use spn_core::raster::derive_seed;
use spn_core::synth::{inject_tamper, synthesize, SceneModel, SyntheticCamera, TamperMode};
use spn_core::video::{FrameType, SIDECAR_NAME};
use spn_core::{Image, Rect};

use super::{read_fingerprint, save_with, write_csv};
use crate::args::{ImageFormat, SceneKind, SynthArgs, TamperKind};
use crate::error::{CliError, CliResult};
use crate::manifest::RunContext;

const STREAM_CAMERA: u64 = 1;
const STREAM_IMAGE: u64 = 1000;
const STREAM_TAMPER: u64 = 2000;

#[derive(Serialize)]
struct FrameRow {
    frame_index: usize,
    frame_type: &'static str,
}

fn scene(a: &SynthArgs) -> SceneModel {
    match a.scene {
        SceneKind::Flat => SceneModel::Flat { level: a.level },
        SceneKind::Gradient => SceneModel::Gradient {
            from: a.gradient_from,
            to: a.gradient_to,
        },
        SceneKind::Texture => SceneModel::Texture {
            octaves: a.octaves,
            amplitude: a.amplitude,
            base: a.base,
        },
    }
}

/// Square of side `size` placed pseudo-randomly from `r`.
fn tamper_rect(r: u64, size: usize, width: usize, height: usize) -> CliResult<Rect> {
    if size == 0 || size > width || size > height {
        return Err(CliError::Usage(format!(
            "--tamper-size {size} must be in 1..={}",
            width.min(height)
        )));
    }
    let top = (r % (height - size + 1) as u64) as usize;
    let left = ((r >> 32) % (width - size + 1) as u64) as usize;
    Ok(Rect::new(top, left, size, size))
}

pub fn run(a: &SynthArgs, ctx: &mut RunContext) -> CliResult<()> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be >= 1".into()));
    }
    let cam = match &a.camera {
        Some(path) => {
            let k = read_fingerprint(path, ctx)?;
            SyntheticCamera {
                k,
                theta_sigma: a.theta_sigma,
                seed: 0,
            }
        }
        None => {
            let seed = ctx.seed("camera", derive_seed(a.common.seed, STREAM_CAMERA));
            let cam =
                SyntheticCamera::generate(a.width, a.height, a.strength, a.theta_sigma, seed)?;
            let path = a.out.join("camera.spnf");
            save_with(&path, ctx, |p| save_fingerprint(&cam.k, p))?;
            cam
        }
    };
    let (width, height) = cam.dims();
    let scene = scene(a);
    let ext = match a.format {
        ImageFormat::Png => "png",
        ImageFormat::Pgm => "pgm",
    };
    let mut frames = Vec::new();
    for i in 0..a.n {
        let seed = ctx.seed(
            format!("image:{i}"),
            derive_seed(a.common.seed, STREAM_IMAGE + i as u64),
        );
        let mut img = synthesize(&scene, &cam, seed)?;
        if a.tamper != TamperKind::None {
            let r = ctx.seed(
                format!("tamper:{i}"),
                derive_seed(a.common.seed, STREAM_TAMPER + i as u64),
            );
            let rect = tamper_rect(r, a.tamper_size, width, height)?;
            let mode = match a.tamper {
                TamperKind::Foreign => TamperMode::ForeignCamera {
                    strength: a.tamper_strength,
                    theta_sigma: a.theta_sigma,
                    seed: r,
                },
                _ => TamperMode::Smooth {
                    sigma: a.tamper_sigma,
                },
            };
            let (tampered, mask) = inject_tamper(&img, rect, mode)?;
            img = tampered;
            let levels = mask
                .data
                .iter()
                .map(|&m| if m { 255.0 } else { 0.0 })
                .collect();
            let mask_img = Image::new(width, height, levels)?;
            let path = a.out.join(format!("mask_{i:04}.pgm"));
            save_with(&path, ctx, |p| save_pgm(&mask_img, p))?;
        }
        if a.gop > 0 {
            let ty = if i % a.gop == 0 {
                FrameType::I
            } else {
                FrameType::Other
            };
            if ty == FrameType::Other {
                if !(a.degrade_sigma > 0.0 && a.degrade_sigma.is_finite()) {
                    return Err(CliError::Usage(format!(
                        "--degrade-sigma {} must be > 0",
                        a.degrade_sigma
                    )));
                }
                img = gaussian_blur(&img, a.degrade_sigma);
            }
            frames.push(FrameRow {
                frame_index: i,
                frame_type: ty.as_str(),
            });
        }
        let path = a.out.join(format!("img_{i:04}.{ext}"));
        match a.format {
            ImageFormat::Png => save_with(&path, ctx, |p| save_png(&img, p))?,
            ImageFormat::Pgm => save_with(&path, ctx, |p| save_pgm(&img, p))?,
        }
    }
    if a.gop > 0 {
        write_csv(&a.out.join(SIDECAR_NAME), &frames, ctx)?;
    }
    Ok(())
}
