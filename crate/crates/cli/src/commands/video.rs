use std::collections::BTreeMap;

use serde::Serialize;
use spn_core::container::save_fingerprint;
use spn_core::video::{
    aggregate_video_fp, align_fingerprint, curve_to_csv, pce_vs_n, per_frame_scores,
    AlignmentParams, FrameSet, Scale, SIDECAR_NAME,
};

use super::{build_extractor, parse_usizes, read_fingerprint, save_with, write_json};
use crate::args::VideoAttrArgs;
use crate::error::{CliError, CliResult};
use crate::manifest::RunContext;

#[derive(Serialize)]
struct Summary {
    frames: usize,
    width: usize,
    height: usize,
    curve: Vec<(usize, f64)>,
    mean_pce_by_type: BTreeMap<String, f64>,
}

fn parse_scale(s: &str) -> CliResult<Scale> {
    let (n, d) = s
        .split_once('/')
        .ok_or_else(|| CliError::Usage(format!("--scale: expected num/den, got {s:?}")))?;
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("--scale: bad integer {t:?}")))
    };
    Ok(Scale::new(parse(n)?, parse(d)?)?)
}

pub fn run(a: &VideoAttrArgs, ctx: &mut RunContext) -> CliResult<()> {
    let scoring = build_extractor(&a.extractor, ctx)?;
    if scoring.reference != scoring.extractor.reference() {
        return Err(CliError::Usage(format!(
            "--reference cannot be overridden for the {} extractor in video-attr",
            scoring.name
        )));
    }
    let fp_still = read_fingerprint(&a.fp, ctx)?;
    let frames = FrameSet::from_dir(&a.frames)?;
    for p in frames.paths().unwrap_or_default() {
        ctx.read(p);
    }
    let sidecar = a.frames.join(SIDECAR_NAME);
    if sidecar.is_file() {
        ctx.read(sidecar);
    }
    let scale = parse_scale(&a.scale)?;
    let params = match &a.crop {
        Some(c) => {
            let v = parse_usizes(c, 4, "crop")?;
            AlignmentParams {
                crop_offset: (v[0], v[1]),
                crop_size: (v[2], v[3]),
                scale,
            }
        }
        None => AlignmentParams {
            scale,
            ..AlignmentParams::identity(fp_still.width(), fp_still.height())
        },
    };
    let fp_video = align_fingerprint(&fp_still, &params)?;
    if fp_video.dims() != frames.dims() {
        return Err(CliError::Core(spn_core::Error::DimensionMismatch(format!(
            "aligned fingerprint {:?} vs frames {:?}",
            fp_video.dims(),
            frames.dims()
        ))));
    }
    save_with(&a.out.join("aligned.spnf"), ctx, |p| {
        save_fingerprint(&fp_video, p)
    })?;

    let grid = parse_usizes(&a.grid, 0, "grid")?;
    let curve = pce_vs_n(&frames, &fp_video, &scoring.extractor, &grid)?;
    ctx.write(&a.out.join("curve.csv"), curve_to_csv(&curve).as_bytes())?;

    let report = per_frame_scores(&frames, &fp_video, &scoring.extractor)?;
    ctx.write(&a.out.join("scores.csv"), report.to_csv().as_bytes())?;

    let n = grid.last().copied().unwrap_or(frames.len());
    let aggregate = aggregate_video_fp(&frames, &scoring.extractor, n)?;
    save_with(&a.out.join("video_fp.spnf"), ctx, |p| {
        save_fingerprint(&aggregate, p)
    })?;

    let (width, height) = frames.dims();
    let summary = Summary {
        frames: frames.len(),
        width,
        height,
        curve,
        mean_pce_by_type: report.summary,
    };
    write_json(&a.out.join("summary.json"), &summary, ctx)
}
