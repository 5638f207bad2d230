use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spn_core::detect::{ncc, pce, PceSearch, PCE_EXCLUSION_RADIUS};
use spn_core::{load_image, Rect};

use super::{build_extractor, image_paths, parse_usizes, read_fingerprint, write_csv};
use crate::args::{IdentifyArgs, Label, SearchKind};
use crate::error::{CliError, CliResult};
use crate::manifest::RunContext;

/// One line of a scores file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub probe_path: PathBuf,
    pub camera_id: String,
    pub extractor: String,
    pub patch_w: usize,
    pub patch_h: usize,
    pub kind: String,
    pub value: f64,
    pub dy: Option<isize>,
    pub dx: Option<isize>,
    pub label: Option<String>,
}

pub fn run(a: &IdentifyArgs, ctx: &mut RunContext) -> CliResult<()> {
    let scoring = build_extractor(&a.extractor, ctx)?;
    let fp = read_fingerprint(&a.fp, ctx)?;
    let camera_id = a.camera_id.clone().unwrap_or_else(|| {
        a.fp.file_stem()
            .map_or_else(|| "camera".into(), |s| s.to_string_lossy().into_owned())
    });
    let offset = a
        .offset
        .as_deref()
        .map(|s| parse_usizes(s, 2, "offset").map(|v| (v[0], v[1])))
        .transpose()?;
    let search = match a.search {
        SearchKind::None => PceSearch::None,
        SearchKind::Full => PceSearch::FullTranslation,
    };
    let label = a.label.map(|l| match l {
        Label::H0 => "H0".to_string(),
        Label::H1 => "H1".to_string(),
    });
    let probes = image_paths(&a.probe)?;
    let rows: Vec<[ScoreRow; 2]> = probes
        .par_iter()
        .map(|path| -> CliResult<[ScoreRow; 2]> {
            let img = load_image(path)?;
            let (w, h) = img.dims();
            let region = if img.dims() == fp.dims() && offset.is_none() {
                fp.clone()
            } else {
                let (top, left) = offset.ok_or_else(|| {
                    CliError::Usage(format!(
                        "probe {} is {w}x{h} but the fingerprint is {}x{}; pass --offset",
                        path.display(),
                        fp.width(),
                        fp.height()
                    ))
                })?;
                fp.crop(Rect::new(top, left, h, w))?
            };
            let residual = scoring.extractor.residual(&img)?;
            let template = scoring.reference.template(&region, &img)?;
            let n = ncc(&residual, &template)?;
            let p = pce(&residual, &template, search, PCE_EXCLUSION_RADIUS)?;
            let row = |kind: &str, value: f64, off: Option<(isize, isize)>| ScoreRow {
                probe_path: path.clone(),
                camera_id: camera_id.clone(),
                extractor: scoring.name.to_string(),
                patch_w: w,
                patch_h: h,
                kind: kind.to_string(),
                value,
                dy: off.map(|o| o.0),
                dx: off.map(|o| o.1),
                label: label.clone(),
            };
            Ok([
                row(n.kind.as_str(), n.value, None),
                row(p.kind.as_str(), p.value, p.peak_offset),
            ])
        })
        .collect::<CliResult<_>>()?;
    for p in &probes {
        ctx.read(p);
    }
    let rows: Vec<ScoreRow> = rows.into_iter().flatten().collect();
    write_csv(&a.out, &rows, ctx)
}
