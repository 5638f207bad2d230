use serde::Serialize;
use spn_core::nn::{grad_check, GradCheckOptions, GradCheckReport, Mode, Network, Tensor4};
use spn_core::raster::derive_seed;
use spn_core::spncnn::{build_spncnn, SpnCnnConfig};

use super::write_json;
use crate::args::GradcheckArgs;
use crate::error::{CliError, CliResult};
use crate::manifest::RunContext;

/// Bound on the relative error of the full network with BN and ReLU.
pub const FULL_TOLERANCE: f64 = 1e-3;
/// Bound for the same convolutions without BN and ReLU.
pub const LINEAR_TOLERANCE: f64 = 1e-6;

const STREAM_INPUT: u64 = 1;
const STREAM_TARGET: u64 = 2;
const STREAM_PROBES: u64 = 3;

#[derive(Serialize)]
struct Check {
    max_rel_error: f64,
    checked: usize,
    skipped_kinks: usize,
    tolerance: f64,
    pass: bool,
}

#[derive(Serialize)]
struct Report {
    depth: usize,
    width: usize,
    params: usize,
    full: Check,
    linear: Check,
}

fn check(r: GradCheckReport, tolerance: f64) -> Check {
    Check {
        max_rel_error: r.max_rel_error,
        checked: r.checked,
        skipped_kinks: r.skipped_kinks,
        tolerance,
        pass: r.max_rel_error < tolerance,
    }
}

/// Uniform values in [-1, 1) drawn from hashed counters.
fn uniform_tensor(batch: usize, size: usize, seed: u64) -> CliResult<Tensor4<f64>> {
    let n = batch * size * size;
    let data = (0..n as u64)
        .map(|i| (derive_seed(seed, i) >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0)
        .collect();
    Ok(Tensor4::from_vec(batch, 1, size, size, data)?)
}

pub fn run(a: &GradcheckArgs, ctx: &mut RunContext) -> CliResult<()> {
    let seed = ctx.seed("gradcheck", a.common.seed);
    let cfg = SpnCnnConfig {
        depth: a.depth,
        width: a.width,
        seed,
        ..Default::default()
    };
    let full: Network<f64> = build_spncnn(&cfg)?.cast();
    let mut linear = full.clone();
    for b in &mut linear.blocks {
        b.bn = None;
        b.relu = false;
    }
    if a.batch == 0 || a.size == 0 {
        return Err(CliError::Usage("--batch and --size must be >= 1".into()));
    }
    let input = uniform_tensor(a.batch, a.size, derive_seed(seed, STREAM_INPUT))?;
    let target = uniform_tensor(a.batch, a.size, derive_seed(seed, STREAM_TARGET))?;
    let opts = GradCheckOptions {
        eps: a.eps,
        samples: a.samples,
        seed: derive_seed(seed, STREAM_PROBES),
        mode: Mode::Train,
    };
    let report = Report {
        depth: a.depth,
        width: a.width,
        params: full.param_count(),
        full: check(grad_check(&full, &input, &target, opts)?, FULL_TOLERANCE),
        linear: check(
            grad_check(&linear, &input, &target, opts)?,
            LINEAR_TOLERANCE,
        ),
    };
    write_json(&a.out, &report, ctx)?;
    for (name, c) in [("full", &report.full), ("linear", &report.linear)] {
        if !c.pass {
            return Err(CliError::CheckFailed(format!(
                "{name} network: max relative error {:.3e} >= {:.0e}",
                c.max_rel_error, c.tolerance
            )));
        }
    }
    eprintln!(
        "gradcheck ok: full {:.3e}, linear {:.3e}",
        report.full.max_rel_error, report.linear.max_rel_error
    );
    Ok(())
}
