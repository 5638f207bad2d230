mod evaluate;
mod fingerprint;
mod gradcheck;
mod identify;
mod localize;
mod synth;
mod train;
mod video;

use std::path::{Path, PathBuf};

use serde::Serialize;
use spn_core::container::{load_fingerprint, load_network};
use spn_core::denoise::WaveletDenoiserConfig;
use spn_core::detect::Reference;
use spn_core::spncnn::{Extractor, TileConfig};
use spn_core::{load_image, Fingerprint, Image};

use crate::args::{Command, ExtractorArgs, ExtractorKind, ReferenceKind};
use crate::error::{CliError, CliResult};
use crate::manifest::RunContext;

pub fn dispatch(cmd: &Command, ctx: &mut RunContext) -> CliResult<()> {
    match cmd {
        Command::Synth(a) => synth::run(a, ctx),
        Command::Fingerprint(a) => fingerprint::run(a, ctx),
        Command::Residual(a) => fingerprint::residual(a, ctx),
        Command::Train(a) => train::run(a, ctx),
        Command::Extract(a) => train::extract(a, ctx),
        Command::Identify(a) => identify::run(a, ctx),
        Command::Evaluate(a) => evaluate::run(a, ctx),
        Command::Localize(a) => localize::run(a, ctx),
        Command::VideoAttr(a) => video::run(a, ctx),
        Command::Gradcheck(a) => gradcheck::run(a, ctx),
        Command::Replay(_) => Err(CliError::Usage("replay cannot be dispatched".into())),
    }
}

/// An extractor together with the template its residuals are scored against.
pub struct Scoring {
    pub extractor: Extractor,
    pub reference: Reference,
    pub name: &'static str,
}

fn chosen_reference(a: &ExtractorArgs) -> Option<Reference> {
    a.reference.map(|r| match r {
        ReferenceKind::Plain => Reference::Plain,
        ReferenceKind::Modulated => Reference::Modulated,
    })
}

pub fn build_extractor(a: &ExtractorArgs, ctx: &mut RunContext) -> CliResult<Scoring> {
    let (extractor, name) = match a.extractor {
        ExtractorKind::Wavelet => {
            let cfg = WaveletDenoiserConfig {
                levels: a.levels,
                sigma0: a.sigma0,
                ..Default::default()
            };
            cfg.validate()?;
            (Extractor::Wavelet(cfg), "wavelet")
        }
        ExtractorKind::Spncnn | ExtractorKind::Denoiser => {
            let path = a.net.as_ref().ok_or_else(|| {
                CliError::Usage(format!(
                    "--net is required for --extractor {:?}",
                    a.extractor
                ))
            })?;
            let net = load_network(path)?;
            ctx.read(path);
            let tiling = TileConfig {
                tile: a.tile,
                overlap: a.overlap,
            };
            tiling.validate(net.receptive_radius())?;
            let (default_ref, name) = if a.extractor == ExtractorKind::Spncnn {
                (Reference::Plain, "spncnn")
            } else {
                (Reference::Modulated, "denoiser")
            };
            let reference = chosen_reference(a).unwrap_or(default_ref);
            (
                Extractor::Cnn {
                    net,
                    tiling,
                    reference,
                },
                name,
            )
        }
    };
    let reference = chosen_reference(a).unwrap_or(extractor.reference());
    Ok(Scoring {
        extractor,
        reference,
        name,
    })
}

pub fn read_image(path: &Path, ctx: &mut RunContext) -> CliResult<Image> {
    let img = load_image(path)?;
    ctx.read(path);
    Ok(img)
}

pub fn read_fingerprint(path: &Path, ctx: &mut RunContext) -> CliResult<Fingerprint> {
    let fp = load_fingerprint(path)?;
    ctx.read(path);
    Ok(fp)
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm"))
}

/// PNG and PGM files of a directory in file-name order, or the file itself.
/// Files named `mask_*` are ground truth written by `synth` and are skipped.
pub fn image_paths(path: &Path) -> CliResult<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| CliError::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_image(p))
        .filter(|p| {
            !p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("mask_"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Core(spn_core::Error::Empty(format!(
            "no PNG/PGM images in {}",
            path.display()
        ))));
    }
    Ok(paths)
}

/// Parses `a,b,...` into unsigned integers, exactly `n` of them unless `n` is 0.
pub fn parse_usizes(s: &str, n: usize, flag: &str) -> CliResult<Vec<usize>> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| {
            CliError::Usage(format!(
                "--{flag}: expected comma-separated integers, got {s:?}"
            ))
        })?;
    if n != 0 && v.len() != n {
        return Err(CliError::Usage(format!(
            "--{flag}: expected {n} values, got {}",
            v.len()
        )));
    }
    Ok(v)
}

pub fn write_json(path: &Path, value: &impl Serialize, ctx: &mut RunContext) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e))?;
    text.push('\n');
    ctx.write(path, text.as_bytes())
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R], ctx: &mut RunContext) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::format(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::format(path, e))?;
    ctx.write(path, &bytes)
}

/// Writes through a core saver and records the file.
pub fn save_with(
    path: &Path,
    ctx: &mut RunContext,
    save: impl FnOnce(&Path) -> spn_core::Result<()>,
) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    save(path)?;
    ctx.wrote(path);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usize_lists_parse_and_check_arity() {
        assert_eq!(parse_usizes("1, 5,10", 0, "grid").unwrap(), [1, 5, 10]);
        assert!(parse_usizes("1,2", 3, "crop").is_err());
        assert!(parse_usizes("1,x", 0, "grid").is_err());
    }
}
