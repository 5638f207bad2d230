use std::path::PathBuf;

use serde::Serialize;
use spn_core::container::{load_network, save_fingerprint, save_network};
use spn_core::spncnn::{
    build_spncnn, extract as extract_residual, train, train_gaussian_baseline, DecayMode,
    EpochStats, SpnCnnConfig, TileConfig,
};
use spn_core::{Fingerprint, FingerprintKind};

use super::{image_paths, read_fingerprint, read_image, save_with, write_csv};
use crate::args::{DecayKind, ExtractArgs, TrainArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::RunContext;

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    mean_loss: f64,
    lr: f64,
    patches: usize,
}

fn config(a: &TrainArgs, seed: u64) -> SpnCnnConfig {
    SpnCnnConfig {
        depth: a.depth,
        width: a.width,
        patch: a.patch,
        batch: a.batch,
        epochs: a.epochs,
        lr: a.lr,
        lr_decay: a.lr_decay,
        decay_period: a.decay_period,
        decay_mode: match a.decay_mode {
            DecayKind::LrStep => DecayMode::LrStep,
            DecayKind::L2 => DecayMode::L2(a.l2),
        },
        max_patches_per_image: a.max_patches,
        target_gain: a.target_gain,
        seed,
    }
}

pub fn run(a: &TrainArgs, ctx: &mut RunContext) -> CliResult<()> {
    let cfg = config(a, ctx.seed("train", a.common.seed));
    let net = build_spncnn(&cfg)?;
    let images = image_paths(&a.images)?
        .iter()
        .map(|p| read_image(p, ctx))
        .collect::<CliResult<Vec<_>>>()?;
    let mut progress = |s: &EpochStats| {
        eprintln!(
            "epoch {:>4}  loss {:.6e}  lr {:.3e}  patches {}",
            s.epoch, s.mean_loss, s.lr, s.patches
        );
    };
    let trained = match (a.baseline_sigma, &a.fp) {
        (Some(sigma), None) => train_gaussian_baseline(net, &images, sigma, &cfg, &mut progress)?,
        (None, Some(fp)) => {
            let fp = read_fingerprint(fp, ctx)?;
            train(net, &images, &fp, &cfg, &mut progress)?
        }
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "--fp and --baseline-sigma are exclusive".into(),
            ))
        }
        (None, None) => {
            return Err(CliError::Usage(
                "--fp or --baseline-sigma is required".into(),
            ))
        }
    };
    save_with(&a.out, ctx, |p| save_network(&trained.net, p))?;
    let loss_csv = a.loss_csv.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".loss.csv");
        PathBuf::from(s)
    });
    let rows: Vec<LossRow> = trained
        .history
        .iter()
        .map(|s| LossRow {
            epoch: s.epoch,
            mean_loss: s.mean_loss,
            lr: s.lr,
            patches: s.patches,
        })
        .collect();
    write_csv(&loss_csv, &rows, ctx)
}

pub fn extract(a: &ExtractArgs, ctx: &mut RunContext) -> CliResult<()> {
    let net = load_network(&a.net)?;
    ctx.read(&a.net);
    let img = read_image(&a.image, ctx)?;
    let tiling = TileConfig {
        tile: a.tile,
        overlap: a.overlap,
    };
    let w = extract_residual(&net, &img, tiling)?;
    let (width, height) = w.dims();
    let plane = Fingerprint::new(width, height, w.into_data(), FingerprintKind::CnnAggregate)?;
    save_with(&a.out, ctx, |p| save_fingerprint(&plane, p))
}
