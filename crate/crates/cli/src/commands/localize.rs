use serde::Serialize;
use spn_core::localize::{
    delta_map, extract_features, fit_predictor, pixel_roc, sliding_corr_residual,
    write_heatmap_pgm, CorrelationMap, WindowGrid,
};
use spn_core::{Fingerprint, Image, Mask};

use super::{image_paths, read_fingerprint, read_image, save_with, write_json, Scoring};
use crate::args::LocalizeArgs;
use crate::error::CliResult;
use crate::manifest::RunContext;

#[derive(Serialize)]
struct Predictor<'a> {
    feature_names: &'a [String],
    weights: &'a [f64],
    rms: f64,
    training_windows: usize,
}

#[derive(Serialize)]
struct Summary {
    windows: usize,
    degenerate_windows: usize,
    min_delta: f64,
    mean_delta: f64,
    pixel_auc: Option<f64>,
}

fn correlation(
    img: &Image,
    fp: &Fingerprint,
    scoring: &Scoring,
    grid: WindowGrid,
) -> CliResult<CorrelationMap> {
    let w = scoring.extractor.residual(img)?;
    let template = scoring.reference.template(fp, img)?;
    Ok(sliding_corr_residual(&w, &template, grid)?)
}

pub fn run(a: &LocalizeArgs, ctx: &mut RunContext) -> CliResult<()> {
    let scoring = super::build_extractor(&a.extractor, ctx)?;
    let fp = read_fingerprint(&a.fp, ctx)?;
    let (width, height) = fp.dims();
    let grid = WindowGrid::new(width, height, a.window, a.stride)?;

    let mut features = Vec::new();
    let mut rhos = Vec::new();
    for path in image_paths(&a.train)? {
        let img = read_image(&path, ctx)?;
        let map = correlation(&img, &fp, &scoring, grid)?;
        let feats = extract_features(&img, grid)?;
        for ((f, &rho), &bad) in feats.iter().zip(&map.values).zip(&map.degenerate) {
            if !bad {
                features.push(*f);
                rhos.push(rho);
            }
        }
    }
    let model = fit_predictor(&features, &rhos)?;

    let img = read_image(&a.image, ctx)?;
    let measured = correlation(&img, &fp, &scoring, grid)?;
    let predicted = model.predict(&extract_features(&img, grid)?, grid)?;
    let delta = delta_map(&measured, &predicted)?;

    ctx.write(&a.out.join("correlation.csv"), measured.to_csv().as_bytes())?;
    ctx.write(&a.out.join("predicted.csv"), predicted.to_csv().as_bytes())?;
    ctx.write(&a.out.join("delta.csv"), delta.to_csv().as_bytes())?;
    save_with(&a.out.join("heatmap.pgm"), ctx, |p| {
        write_heatmap_pgm(&delta, p)
    })?;
    write_json(
        &a.out.join("predictor.json"),
        &Predictor {
            feature_names: &model.feature_names,
            weights: &model.weights,
            rms: model.rms,
            training_windows: rhos.len(),
        },
        ctx,
    )?;

    let pixel_auc = match &a.mask {
        Some(path) => {
            let m = read_image(path, ctx)?;
            let mask = Mask {
                width: m.width(),
                height: m.height(),
                data: m.data().iter().map(|&v| v > 127.5).collect(),
            };
            Some(pixel_roc(&delta, &mask)?.auc)
        }
        None => None,
    };
    let valid: Vec<f64> = delta
        .values
        .iter()
        .zip(&delta.degenerate)
        .filter(|(_, &bad)| !bad)
        .map(|(&v, _)| v)
        .collect();
    let summary = Summary {
        windows: grid.len(),
        degenerate_windows: grid.len() - valid.len(),
        min_delta: valid.iter().copied().fold(f64::INFINITY, f64::min),
        mean_delta: valid.iter().sum::<f64>() / valid.len().max(1) as f64,
        pixel_auc,
    };
    write_json(&a.out.join("summary.json"), &summary, ctx)
}
