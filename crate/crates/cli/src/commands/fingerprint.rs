use rayon::prelude::*;
use spn_core::container::save_fingerprint;
use spn_core::fingerprint::{clean_nua, CleanOptions, MleAccumulator};
use spn_core::{load_image, Fingerprint, Image, NoiseResidual};

use super::{build_extractor, image_paths, read_image, save_with};
use crate::args::{FingerprintArgs, ResidualArgs};
use crate::error::CliResult;
use crate::manifest::RunContext;

/// Images whose residuals are extracted concurrently before accumulation.
const CHUNK: usize = 8;

pub fn run(a: &FingerprintArgs, ctx: &mut RunContext) -> CliResult<()> {
    let scoring = build_extractor(&a.extractor, ctx)?;
    let paths = image_paths(&a.images)?;
    let mut acc = MleAccumulator::new();
    for chunk in paths.chunks(CHUNK) {
        let done: Vec<(Image, NoiseResidual)> = chunk
            .par_iter()
            .map(|p| {
                let img = load_image(p)?;
                let w = scoring.extractor.residual(&img)?;
                Ok((img, w))
            })
            .collect::<spn_core::Result<_>>()?;
        for (img, w) in &done {
            acc.absorb(img, w)?;
        }
    }
    for p in &paths {
        ctx.read(p);
    }
    let mut fp = acc
        .finalize()?
        .with_kind(scoring.extractor.aggregate_kind());
    if !a.no_clean {
        fp = clean_nua(
            &fp,
            CleanOptions {
                wiener_dft: a.wiener_dft,
            },
        )
        .with_kind(fp.kind());
    }
    save_with(&a.out, ctx, |p| save_fingerprint(&fp, p))
}

pub fn residual(a: &ResidualArgs, ctx: &mut RunContext) -> CliResult<()> {
    let scoring = build_extractor(&a.extractor, ctx)?;
    let img = read_image(&a.image, ctx)?;
    let w = scoring.extractor.residual(&img)?;
    let (width, height) = w.dims();
    let plane = Fingerprint::new(
        width,
        height,
        w.into_data(),
        scoring.extractor.aggregate_kind(),
    )?;
    save_with(&a.out, ctx, |p| save_fingerprint(&plane, p))
}
