use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;
use spn_core::detect::{median, median_table, roc, threshold_for_fpr, ScoreSet};

use super::identify::ScoreRow;
use super::{write_csv, write_json};
use crate::args::{EvaluateArgs, ScoreKindArg};
use crate::error::{CliError, CliResult};
use crate::manifest::RunContext;

#[derive(Serialize)]
struct RocRow {
    fpr: f64,
    tpr: f64,
}

#[derive(Serialize)]
struct GroupRow {
    camera_id: String,
    extractor: String,
    patch_w: usize,
    patch_h: usize,
    n_h1: usize,
    n_h0: usize,
    median_h1: Option<f64>,
    median_h0: Option<f64>,
    auc: Option<f64>,
}

#[derive(Serialize)]
struct Summary {
    kind: &'static str,
    n_h1: usize,
    n_h0: usize,
    auc: f64,
    median_h1: f64,
    median_h0: f64,
    target_fpr: Option<f64>,
    threshold: Option<f64>,
    groups: Vec<GroupRow>,
}

fn read_rows(path: &PathBuf, ctx: &mut RunContext) -> CliResult<Vec<ScoreRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::format(path, e))?;
    let rows = reader
        .deserialize()
        .collect::<Result<Vec<ScoreRow>, _>>()
        .map_err(|e| CliError::format(path, e))?;
    ctx.read(path);
    Ok(rows)
}

fn optional(v: &[f64]) -> CliResult<Option<f64>> {
    Ok(if v.is_empty() { None } else { Some(median(v)?) })
}

pub fn run(a: &EvaluateArgs, ctx: &mut RunContext) -> CliResult<()> {
    let kind = match a.kind {
        ScoreKindArg::Ncc => "ncc",
        ScoreKindArg::Pce => "pce",
    };
    let mut all = ScoreSet::default();
    let mut groups: BTreeMap<(String, String, usize, usize), ScoreSet> = BTreeMap::new();
    let mut cells: BTreeMap<(String, String), ScoreSet> = BTreeMap::new();
    for path in a.scores.split(',').map(|s| PathBuf::from(s.trim())) {
        for row in read_rows(&path, ctx)? {
            if row.kind != kind {
                continue;
            }
            let h1 = match row.label.as_deref() {
                Some("H1") => true,
                Some("H0") => false,
                other => {
                    return Err(CliError::format(
                        &path,
                        format!(
                            "{}: label must be H0 or H1, got {other:?}",
                            row.probe_path.display()
                        ),
                    ))
                }
            };
            let group = groups
                .entry((
                    row.camera_id.clone(),
                    row.extractor.clone(),
                    row.patch_w,
                    row.patch_h,
                ))
                .or_insert_with(|| ScoreSet {
                    camera_id: row.camera_id.clone(),
                    extractor: row.extractor.clone(),
                    patch: (row.patch_w, row.patch_h),
                    ..Default::default()
                });
            let cell = cells
                .entry((row.camera_id.clone(), row.extractor.clone()))
                .or_insert_with(|| ScoreSet {
                    camera_id: row.camera_id.clone(),
                    extractor: row.extractor.clone(),
                    ..Default::default()
                });
            for set in [&mut all, group, cell] {
                if h1 {
                    set.h1.push(row.value);
                } else {
                    set.h0.push(row.value);
                }
            }
        }
    }
    let curve = roc(&all)?;
    let roc_rows: Vec<RocRow> = curve
        .points
        .iter()
        .map(|&(fpr, tpr)| RocRow { fpr, tpr })
        .collect();
    write_csv(&a.out.join("roc.csv"), &roc_rows, ctx)?;

    let with_h1: Vec<ScoreSet> = cells.into_values().filter(|s| !s.h1.is_empty()).collect();
    let table = median_table(&with_h1)?;
    ctx.write(&a.out.join("medians.csv"), table.to_csv().as_bytes())?;

    let group_rows = groups
        .into_values()
        .map(|s| {
            let auc = if s.h1.is_empty() || s.h0.is_empty() {
                None
            } else {
                Some(roc(&s)?.auc)
            };
            Ok(GroupRow {
                n_h1: s.h1.len(),
                n_h0: s.h0.len(),
                median_h1: optional(&s.h1)?,
                median_h0: optional(&s.h0)?,
                auc,
                patch_w: s.patch.0,
                patch_h: s.patch.1,
                camera_id: s.camera_id,
                extractor: s.extractor,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    write_csv(&a.out.join("groups.csv"), &group_rows, ctx)?;

    let threshold = a.fpr.map(|f| threshold_for_fpr(&all.h0, f)).transpose()?;
    let summary = Summary {
        kind,
        n_h1: all.h1.len(),
        n_h0: all.h0.len(),
        auc: curve.auc,
        median_h1: median(&all.h1)?,
        median_h0: median(&all.h0)?,
        target_fpr: a.fpr,
        threshold,
        groups: group_rows,
    };
    write_json(&a.out.join("summary.json"), &summary, ctx)
}
