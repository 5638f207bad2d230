use super::batchnorm::{batchnorm, batchnorm_backward, BatchNormLayer, BnStats, Mode};
use super::conv::{conv2d, conv2d_backward, ConvLayer};
use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};

/// One convolution, optionally followed by batch normalization and ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub conv: ConvLayer<T>,
    pub bn: Option<BatchNormLayer<T>>,
    pub relu: bool,
}

impl<T: Real> Block<T> {
    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.as_ref().map_or(0, |b| 4 * b.channels())
    }
}

/// Feed-forward stack of blocks. Every block keeps the spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub blocks: Vec<Block<T>>,
}

/// Intermediates retained by a training forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    mode: Mode,
    input: Tensor4<T>,
    blocks: Vec<BlockTape<T>>,
}

#[derive(Debug, Clone)]
struct BlockTape<T> {
    /// Convolution output, kept when a batch norm follows.
    pre_norm: Option<Tensor4<T>>,
    stats: Option<BnStats<T>>,
    /// Block output (after activation).
    output: Tensor4<T>,
}

impl<T: Real> Tape<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// On/off state of every ReLU unit in the recorded pass.
    pub fn active_units(&self, net: &Network<T>) -> Vec<bool> {
        net.blocks
            .iter()
            .zip(&self.blocks)
            .filter(|(b, _)| b.relu)
            .flat_map(|(_, t)| t.output.data.iter().map(|&v| v > T::zero()))
            .collect()
    }
}

/// Gradients for every trainable tensor of a network, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Real> Grads<T> {
    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .fold(0.0, |m, v| m.max(v.as_f64().abs()))
    }
}

impl<T: Real> Network<T> {
    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn in_channels(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.conv.in_ch)
    }

    pub fn out_channels(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.conv.out_ch)
    }

    /// Pixels of context on each side that influence one output pixel.
    pub fn receptive_radius(&self) -> usize {
        self.blocks.len()
    }

    /// Total stored parameters, including batch-norm running statistics.
    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(Block::param_count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidConfig("network has no layers".into()));
        }
        for (i, pair) in self.blocks.windows(2).enumerate() {
            if pair[0].conv.out_ch != pair[1].conv.in_ch {
                return Err(Error::InvalidConfig(format!(
                    "layer {i} emits {} channels but layer {} expects {}",
                    pair[0].conv.out_ch,
                    i + 1,
                    pair[1].conv.in_ch
                )));
            }
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let c = &b.conv;
            let bn_ok = b.bn.as_ref().is_none_or(|bn| {
                bn.channels() == c.out_ch
                    && bn.beta.len() == c.out_ch
                    && bn.running_mean.len() == c.out_ch
                    && bn.running_var.len() == c.out_ch
            });
            if c.kernels.len() != c.out_ch * c.in_ch * 9 || c.bias.len() != c.out_ch || !bn_ok {
                return Err(Error::InvalidConfig(format!(
                    "layer {i} has malformed parameters"
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    conv: b.conv.cast(),
                    bn: b.bn.as_ref().map(BatchNormLayer::cast),
                    relu: b.relu,
                })
                .collect(),
        }
    }

    /// Mutable views of the trainable tensors: per block kernels, bias and,
    /// when present, gamma and beta.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(b.conv.kernels.as_mut_slice());
            out.push(b.conv.bias.as_mut_slice());
            if let Some(bn) = b.bn.as_mut() {
                out.push(bn.gamma.as_mut_slice());
                out.push(bn.beta.as_mut_slice());
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(b.conv.kernels.as_slice());
            out.push(b.conv.bias.as_slice());
            if let Some(bn) = b.bn.as_ref() {
                out.push(bn.gamma.as_slice());
                out.push(bn.beta.as_slice());
            }
        }
        out
    }

    fn check_input(&self, input: &Tensor4<T>) -> Result<()> {
        self.validate()?;
        if input.channels != self.in_channels() {
            return Err(Error::DimensionMismatch(format!(
                "network expects {} input channels, got {}",
                self.in_channels(),
                input.channels
            )));
        }
        Ok(())
    }

    fn apply_block(block: &Block<T>, x: &Tensor4<T>, mode: Mode) -> Result<BlockTape<T>> {
        let z = conv2d(x, &block.conv)?;
        let (mut y, pre_norm, stats) = match &block.bn {
            Some(bn) => {
                let (y, stats) = batchnorm(&z, bn, mode)?;
                (y, Some(z), Some(stats))
            }
            None => (z, None, None),
        };
        if block.relu {
            for v in &mut y.data {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
        }
        Ok(BlockTape {
            pre_norm,
            stats,
            output: y,
        })
    }

    /// Runs the stack and records what `backward` needs.
    pub fn forward(&self, input: &Tensor4<T>, mode: Mode) -> Result<(Tensor4<T>, Tape<T>)> {
        self.check_input(input)?;
        let mut tapes: Vec<BlockTape<T>> = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let x = tapes.last().map_or(input, |t| &t.output);
            let bt = Self::apply_block(block, x, mode)?;
            tapes.push(bt);
        }
        let output = tapes.last().expect("validated non-empty").output.clone();
        Ok((
            output,
            Tape {
                mode,
                input: input.clone(),
                blocks: tapes,
            },
        ))
    }

    /// Eval-mode forward pass that keeps no intermediates. Produces exactly
    /// the output of `forward(input, Mode::Eval)`.
    pub fn infer(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(input)?;
        let mut x = Self::apply_block(&self.blocks[0], input, Mode::Eval)?.output;
        for block in &self.blocks[1..] {
            x = Self::apply_block(block, &x, Mode::Eval)?.output;
        }
        Ok(x)
    }

    /// Folds the batch statistics recorded on a training tape into the
    /// running statistics.
    pub fn update_running_stats(&mut self, tape: &Tape<T>) {
        for (block, bt) in self.blocks.iter_mut().zip(&tape.blocks) {
            if let (Some(bn), Some(stats)) = (block.bn.as_mut(), bt.stats.as_ref()) {
                bn.update_running(stats);
            }
        }
    }

    /// Backpropagates `grad_out` through the recorded pass. Returns parameter
    /// gradients (ordered as `params`) and the gradient wrt the input.
    pub fn backward(
        &self,
        tape: &Tape<T>,
        grad_out: &Tensor4<T>,
    ) -> Result<(Grads<T>, Tensor4<T>)> {
        let last = tape
            .blocks
            .last()
            .ok_or_else(|| Error::InvalidConfig("empty tape".into()))?;
        if tape.blocks.len() != self.blocks.len() || last.output.shape() != grad_out.shape() {
            return Err(Error::DimensionMismatch(format!(
                "gradient of shape {:?} for a tape ending in {:?}",
                grad_out.shape(),
                last.output.shape()
            )));
        }
        let mut per_block: Vec<Vec<Vec<T>>> = vec![Vec::new(); self.blocks.len()];
        let mut g = grad_out.clone();
        for i in (0..self.blocks.len()).rev() {
            let block = &self.blocks[i];
            let bt = &tape.blocks[i];
            if block.relu {
                for (gv, &y) in g.data.iter_mut().zip(&bt.output.data) {
                    if y <= T::zero() {
                        *gv = T::zero();
                    }
                }
            }
            let mut bn_grads = None;
            if let (Some(bn), Some(z), Some(stats)) = (&block.bn, &bt.pre_norm, &bt.stats) {
                let (dgamma, dbeta, dz) = batchnorm_backward(z, bn, stats, tape.mode, &g);
                bn_grads = Some((dgamma, dbeta));
                g = dz;
            }
            let x = if i == 0 {
                &tape.input
            } else {
                &tape.blocks[i - 1].output
            };
            let (cg, gin) = conv2d_backward(x, &block.conv, &g, true);
            let mut tensors = vec![cg.kernels, cg.bias];
            if let Some((dgamma, dbeta)) = bn_grads {
                tensors.push(dgamma);
                tensors.push(dbeta);
            }
            per_block[i] = tensors;
            g = gin.expect("input gradient requested");
        }
        Ok((
            Grads {
                tensors: per_block.into_iter().flatten().collect(),
            },
            g,
        ))
    }
}
