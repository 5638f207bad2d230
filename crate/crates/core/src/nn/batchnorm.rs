use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics can be updated from the tape.
    Train,
    /// Running statistics; a pure function of the parameters.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

/// Per-channel statistics used by one normalization pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
    /// Unbiased batch variance, for the running-statistics update.
    pub var_unbiased: Vec<T>,
}

impl<T: Real> BatchNormLayer<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormLayer {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn cast<U: Real>(&self) -> BatchNormLayer<U> {
        let c = |v: &[T]| v.iter().map(|&x| U::from_f64(x.as_f64())).collect();
        BatchNormLayer {
            gamma: c(&self.gamma),
            beta: c(&self.beta),
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
        }
    }

    /// Exponential moving average of the batch statistics.
    pub fn update_running(&mut self, stats: &BnStats<T>) {
        let m = T::from_f64(BN_MOMENTUM);
        let keep = T::one() - m;
        for c in 0..self.channels() {
            self.running_mean[c] = keep * self.running_mean[c] + m * stats.mean[c];
            self.running_var[c] = keep * self.running_var[c] + m * stats.var_unbiased[c];
        }
    }
}

fn channel_values<T: Real>(t: &Tensor4<T>, c: usize) -> impl Iterator<Item = &[T]> {
    let hw = t.plane_len();
    (0..t.batch).map(move |b| &t.data[(b * t.channels + c) * hw..][..hw])
}

/// Normalizes `input` per channel and applies the affine terms. Returns the
/// statistics that were used.
pub fn batchnorm<T: Real>(
    input: &Tensor4<T>,
    layer: &BatchNormLayer<T>,
    mode: Mode,
) -> Result<(Tensor4<T>, BnStats<T>)> {
    let channels = layer.channels();
    if input.channels != channels {
        return Err(Error::DimensionMismatch(format!(
            "batch norm over {channels} channels, input has {}",
            input.channels
        )));
    }
    let count = input.batch * input.plane_len();
    let eps = BN_EPSILON;
    let stats = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::Degenerate(
                    "batch statistics need more than one value per channel".into(),
                ));
            }
            let mut stats = BnStats {
                mean: Vec::with_capacity(channels),
                inv_std: Vec::with_capacity(channels),
                var_unbiased: Vec::with_capacity(channels),
            };
            for c in 0..channels {
                let sum: f64 = channel_values(input, c)
                    .flat_map(|p| p.iter())
                    .map(|v| v.as_f64())
                    .sum();
                let mean = sum / count as f64;
                let ss: f64 = channel_values(input, c)
                    .flat_map(|p| p.iter())
                    .map(|v| (v.as_f64() - mean).powi(2))
                    .sum();
                let var = ss / count as f64;
                stats.mean.push(T::from_f64(mean));
                stats.inv_std.push(T::from_f64(1.0 / (var + eps).sqrt()));
                stats
                    .var_unbiased
                    .push(T::from_f64(ss / (count - 1) as f64));
            }
            stats
        }
        Mode::Eval => BnStats {
            mean: layer.running_mean.clone(),
            inv_std: layer
                .running_var
                .iter()
                .map(|&v| T::from_f64(1.0 / (v.as_f64() + eps).sqrt()))
                .collect(),
            var_unbiased: layer.running_var.clone(),
        },
    };
    let mut out = input.clone();
    let hw = input.plane_len();
    for b in 0..input.batch {
        for c in 0..channels {
            let (mu, is) = (stats.mean[c], stats.inv_std[c]);
            let (g, bt) = (layer.gamma[c], layer.beta[c]);
            for v in &mut out.data[(b * channels + c) * hw..][..hw] {
                *v = g * ((*v - mu) * is) + bt;
            }
        }
    }
    Ok((out, stats))
}

/// Gradients of a batch-norm pass. `input` is the pre-normalization tensor.
pub fn batchnorm_backward<T: Real>(
    input: &Tensor4<T>,
    layer: &BatchNormLayer<T>,
    stats: &BnStats<T>,
    mode: Mode,
    grad_out: &Tensor4<T>,
) -> (Vec<T>, Vec<T>, Tensor4<T>) {
    let channels = layer.channels();
    let hw = input.plane_len();
    let count = (input.batch * hw) as f64;
    let mut dgamma = vec![T::zero(); channels];
    let mut dbeta = vec![T::zero(); channels];
    let mut grad_in = Tensor4::zeros(input.batch, channels, input.height, input.width);
    for c in 0..channels {
        let (mu, is) = (stats.mean[c], stats.inv_std[c]);
        let mut sum_g = 0.0f64;
        let mut sum_gx = 0.0f64;
        for b in 0..input.batch {
            let off = (b * channels + c) * hw;
            for (&x, &g) in input.data[off..off + hw]
                .iter()
                .zip(&grad_out.data[off..off + hw])
            {
                let xhat = ((x - mu) * is).as_f64();
                sum_g += g.as_f64();
                sum_gx += g.as_f64() * xhat;
            }
        }
        dgamma[c] = T::from_f64(sum_gx);
        dbeta[c] = T::from_f64(sum_g);
        let gamma = layer.gamma[c];
        match mode {
            Mode::Train => {
                let scale = gamma * is;
                let mean_g = T::from_f64(sum_g / count);
                let mean_gx = T::from_f64(sum_gx / count);
                for b in 0..input.batch {
                    let off = (b * channels + c) * hw;
                    for i in off..off + hw {
                        let xhat = (input.data[i] - mu) * is;
                        grad_in.data[i] = scale * (grad_out.data[i] - mean_g - xhat * mean_gx);
                    }
                }
            }
            Mode::Eval => {
                let scale = gamma * is;
                for b in 0..input.batch {
                    let off = (b * channels + c) * hw;
                    for i in off..off + hw {
                        grad_in.data[i] = scale * grad_out.data[i];
                    }
                }
            }
        }
    }
    (dgamma, dbeta, grad_in)
}
