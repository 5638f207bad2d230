//! Central finite-difference verification of `Network::backward`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batchnorm::Mode;
use super::loss::mse_loss;
use super::network::{Grads, Network};
use super::tensor::{Real, Tensor4};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Parameters to probe; every parameter is probed when there are fewer.
    pub samples: usize,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-3,
            samples: 200,
            seed: 0,
            mode: Mode::Train,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Probes discarded because the perturbation flipped a ReLU.
    pub skipped_kinks: usize,
}

fn loss_at(
    net: &Network<f64>,
    input: &Tensor4<f64>,
    target: &Tensor4<f64>,
    mode: Mode,
) -> Result<(f64, Vec<bool>)> {
    let (out, tape) = net.forward(input, mode)?;
    let (loss, _) = mse_loss(&out, target)?;
    Ok((loss, tape.active_units(net)))
}

/// Analytic gradients of the MSE loss, evaluated in double precision.
pub fn analytic_grads(
    net: &Network<f64>,
    input: &Tensor4<f64>,
    target: &Tensor4<f64>,
    mode: Mode,
) -> Result<Grads<f64>> {
    let (out, tape) = net.forward(input, mode)?;
    let (_, g) = mse_loss(&out, target)?;
    Ok(net.backward(&tape, &g)?.0)
}

/// Compares the analytic gradients of `net` against central differences on a
/// random subset of parameters. All arithmetic runs in `f64`.
pub fn grad_check<T: Real>(
    net: &Network<T>,
    input: &Tensor4<T>,
    target: &Tensor4<T>,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let net = net.cast::<f64>();
    let input = input.cast::<f64>();
    let target = target.cast::<f64>();
    let analytic = analytic_grads(&net, &input, &target, opts.mode)?;
    grad_check_against(&net, &input, &target, &analytic, opts)
}

/// Like `grad_check`, but against caller-supplied analytic gradients.
pub fn grad_check_against(
    net: &Network<f64>,
    input: &Tensor4<f64>,
    target: &Tensor4<f64>,
    analytic: &Grads<f64>,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut probe = net.clone();
    let mut index: Vec<(usize, usize)> = probe
        .params()
        .iter()
        .enumerate()
        .flat_map(|(t, p)| (0..p.len()).map(move |i| (t, i)))
        .collect();
    index.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));

    // Gradients that vanish analytically (e.g. biases feeding a batch norm)
    // are compared against a floor relative to the largest gradient.
    let floor = (1e-6 * analytic.max_abs()).max(1e-12);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    for (t, i) in index {
        if report.checked >= opts.samples {
            break;
        }
        let original = probe.params()[t][i];
        probe.params_mut()[t][i] = original + opts.eps;
        let (plus, pattern_plus) = loss_at(&probe, input, target, opts.mode)?;
        probe.params_mut()[t][i] = original - opts.eps;
        let (minus, pattern_minus) = loss_at(&probe, input, target, opts.mode)?;
        probe.params_mut()[t][i] = original;
        if pattern_plus != pattern_minus {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * opts.eps);
        let a = analytic.tensors[t][i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BatchNormLayer, Block, ConvLayer};
    use rand::Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor4<f64> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        Tensor4::from_vec(shape[0], shape[1], shape[2], shape[3], data).unwrap()
    }

    fn net(channels: usize, depth: usize, nonlinear: bool, rng: &mut ChaCha8Rng) -> Network<f64> {
        let mut blocks = Vec::new();
        for i in 0..depth {
            let cin = if i == 0 { 1 } else { channels };
            let cout = if i + 1 == depth { 1 } else { channels };
            let mut conv = ConvLayer::he_normal(cin, cout, rng);
            conv.bias
                .iter_mut()
                .for_each(|b| *b = rng.random::<f64>() * 0.2 - 0.1);
            let inner = i > 0 && i + 1 < depth;
            blocks.push(Block {
                conv,
                bn: (nonlinear && inner).then(|| BatchNormLayer::new(cout)),
                relu: nonlinear && i + 1 < depth,
            });
        }
        Network { blocks }
    }

    #[test]
    fn linear_stack_matches_to_1e6() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = net(4, 3, false, &mut rng);
        let x = random_tensor(&mut rng, [2, 1, 6, 6]);
        let t = random_tensor(&mut rng, [2, 1, 6, 6]);
        let r = grad_check(&n, &x, &t, GradCheckOptions::default()).unwrap();
        assert!(r.checked >= 200, "{r:?}");
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn full_stack_matches_to_1e3() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = net(4, 4, true, &mut rng);
        let x = random_tensor(&mut rng, [2, 1, 6, 6]);
        let t = random_tensor(&mut rng, [2, 1, 6, 6]);
        let r = grad_check(&n, &x, &t, GradCheckOptions::default()).unwrap();
        assert!(r.checked >= 200, "{r:?}");
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }

    #[test]
    fn sign_flipped_backward_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = net(4, 3, true, &mut rng);
        let x = random_tensor(&mut rng, [2, 1, 6, 6]);
        let t = random_tensor(&mut rng, [2, 1, 6, 6]);
        let mut grads = analytic_grads(&n, &x, &t, Mode::Train).unwrap();
        grads.tensors.iter_mut().flatten().for_each(|g| *g = -*g);
        let r = grad_check_against(&n, &x, &t, &grads, GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error > 0.5, "{r:?}");
    }

    #[test]
    fn identical_prediction_has_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = net(3, 3, true, &mut rng);
        let x = random_tensor(&mut rng, [1, 1, 5, 5]);
        let (y, _) = n.forward(&x, Mode::Train).unwrap();
        let g = analytic_grads(&n, &x, &y, Mode::Train).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }
}
