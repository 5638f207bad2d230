//! Camera-specific fingerprint extractor: architecture, patch sampling,
//! training and tiled inference.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::denoise::{residual, WaveletDenoiserConfig};
use crate::detect::Reference;
use crate::error::{Error, Result};
use crate::image::{Image, SATURATION_LEVEL};
use crate::nn::{mse_loss, AdamState, BatchNormLayer, Block, ConvLayer, Mode, Network, Tensor4};
use crate::raster::{derive_seed, Rect};
use crate::signal::{Fingerprint, FingerprintKind, NoiseResidual};

const STREAM_INIT: u64 = 0x1417;
const STREAM_EPOCH: u64 = 0x2000;
const STREAM_SHUFFLE: u64 = 0x3000;
const STREAM_NOISE: u64 = 0x4000;

/// Patches with a larger share of saturated pixels are excluded from training.
pub const MAX_SATURATED_FRACTION: f64 = 0.01;

/// Input scaling applied before the first layer.
pub const INPUT_SCALE: f32 = 1.0 / 255.0;

/// How the decay factor is applied.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DecayMode {
    /// Learning rate multiplied by `lr_decay` every `decay_period` epochs.
    #[default]
    LrStep,
    /// Constant learning rate plus an L2 penalty with this coefficient.
    L2(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpnCnnConfig {
    pub depth: usize,
    pub width: usize,
    pub patch: usize,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_period: usize,
    pub decay_mode: DecayMode,
    pub max_patches_per_image: usize,
    /// Targets are multiplied by this during training; the factor is folded
    /// back out of the last layer afterwards.
    pub target_gain: f64,
    pub seed: u64,
}

impl Default for SpnCnnConfig {
    fn default() -> Self {
        SpnCnnConfig {
            depth: 17,
            width: 64,
            patch: 40,
            batch: 128,
            epochs: 100,
            lr: 1e-3,
            lr_decay: 0.2,
            decay_period: 30,
            decay_mode: DecayMode::LrStep,
            max_patches_per_image: 1000,
            target_gain: 1.0,
            seed: 0,
        }
    }
}

impl SpnCnnConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.depth < 3 {
            return fail(format!("depth {} must be >= 3", self.depth));
        }
        if self.width == 0 {
            return fail("width must be >= 1".into());
        }
        if self.width > u16::MAX as usize {
            return fail(format!("width {} exceeds the model format", self.width));
        }
        if self.depth > u16::MAX as usize {
            return fail(format!("depth {} exceeds the model format", self.depth));
        }
        if self.patch < 8 {
            return fail(format!("patch {} must be >= 8", self.patch));
        }
        if self.batch == 0 || self.max_patches_per_image == 0 || self.decay_period == 0 {
            return fail("batch, max_patches_per_image and decay_period must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr {} must be > 0", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail(format!("lr_decay {} outside (0, 1]", self.lr_decay));
        }
        if let DecayMode::L2(c) = self.decay_mode {
            if !(c >= 0.0 && c.is_finite()) {
                return fail(format!("l2 coefficient {c} must be >= 0"));
            }
        }
        if !(self.target_gain > 0.0 && self.target_gain.is_finite()) {
            return fail(format!("target_gain {} must be > 0", self.target_gain));
        }
        Ok(())
    }

    /// Learning rate of the 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.decay_mode {
            DecayMode::LrStep => {
                let steps = epoch.saturating_sub(1) / self.decay_period;
                self.lr * self.lr_decay.powi(steps as i32)
            }
            DecayMode::L2(_) => self.lr,
        }
    }
}

/// conv+ReLU, then `depth − 2` conv+BN+ReLU blocks, then a plain conv to one channel.
pub fn build_spncnn(cfg: &SpnCnnConfig) -> Result<Network<f32>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_INIT));
    let mut blocks = Vec::with_capacity(cfg.depth);
    for i in 0..cfg.depth {
        let last = i + 1 == cfg.depth;
        let cin = if i == 0 { 1 } else { cfg.width };
        let cout = if last { 1 } else { cfg.width };
        blocks.push(Block {
            conv: ConvLayer::he_normal(cin, cout, &mut rng),
            bn: (i > 0 && !last).then(|| BatchNormLayer::new(cout)),
            relu: !last,
        });
    }
    Ok(Network { blocks })
}

/// Training patches drawn in one epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatchSet {
    pub patch: usize,
    /// Raw intensities, `patch`x`patch` each.
    pub inputs: Vec<Vec<f32>>,
    /// Co-located target crops.
    pub targets: Vec<Vec<f32>>,
    /// Source image index and region of each patch.
    pub coords: Vec<(usize, Rect)>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

fn saturated_fraction(img: &Image, rect: Rect) -> f64 {
    let mut n = 0usize;
    for y in rect.top..rect.bottom() {
        let row = &img.data()[y * img.width() + rect.left..y * img.width() + rect.right()];
        n += row.iter().filter(|&&v| v >= SATURATION_LEVEL).count();
    }
    n as f64 / rect.area() as f64
}

/// Greedy non-overlapping random placement on every image.
fn sample_positions(
    images: &[Image],
    cfg: &SpnCnnConfig,
    epoch_seed: u64,
) -> Result<Vec<(usize, Rect)>> {
    let p = cfg.patch;
    let mut out = Vec::new();
    for (idx, img) in images.iter().enumerate() {
        let (w, h) = img.dims();
        if w < p || h < p {
            return Err(Error::TooSmall(format!(
                "image {idx} is {w}x{h}, patch is {p}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(epoch_seed, idx as u64));
        let mut accepted: Vec<Rect> = Vec::new();
        for _ in 0..3 * cfg.max_patches_per_image {
            if accepted.len() == cfg.max_patches_per_image {
                break;
            }
            let rect = Rect::new(
                rng.random_range(0..=h - p),
                rng.random_range(0..=w - p),
                p,
                p,
            );
            if accepted.iter().any(|r| r.intersects(&rect)) {
                continue;
            }
            if saturated_fraction(img, rect) > MAX_SATURATED_FRACTION {
                continue;
            }
            accepted.push(rect);
        }
        out.extend(accepted.into_iter().map(|r| (idx, r)));
    }
    Ok(out)
}

/// Patches for one epoch with targets cropped from `fp`.
pub fn sample_patches(
    images: &[Image],
    fp: &Fingerprint,
    cfg: &SpnCnnConfig,
    epoch_seed: u64,
) -> Result<PatchSet> {
    cfg.validate()?;
    if let Some(img) = images.iter().find(|i| i.dims() != fp.dims()) {
        return Err(Error::DimensionMismatch(format!(
            "image {:?} not aligned with fingerprint {:?}",
            img.dims(),
            fp.dims()
        )));
    }
    let coords = sample_positions(images, cfg, epoch_seed)?;
    let mut set = PatchSet {
        patch: cfg.patch,
        ..Default::default()
    };
    for &(idx, rect) in &coords {
        set.inputs
            .push(rect.extract(images[idx].data(), fp.width(), fp.height())?);
        set.targets
            .push(rect.extract(fp.data(), fp.width(), fp.height())?);
    }
    set.coords = coords;
    Ok(set)
}

/// Mean training loss of one epoch, in target units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub patches: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub net: Network<f32>,
    pub history: Vec<EpochStats>,
}

/// Where training pairs come from.
enum Targets<'a> {
    Fingerprint(&'a Fingerprint),
    Gaussian(f64),
}

fn check_net(net: &Network<f32>) -> Result<()> {
    net.validate()?;
    if net.in_channels() != 1 || net.out_channels() != 1 {
        return Err(Error::InvalidConfig(format!(
            "extractor must map 1 channel to 1, got {} -> {}",
            net.in_channels(),
            net.out_channels()
        )));
    }
    Ok(())
}

fn train_impl(
    mut net: Network<f32>,
    images: &[Image],
    targets: Targets,
    cfg: &SpnCnnConfig,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<Trained> {
    cfg.validate()?;
    check_net(&net)?;
    if images.is_empty() {
        return Err(Error::Empty("no training images".into()));
    }
    let p = cfg.patch;
    let gain = cfg.target_gain as f32;
    let mut adam = AdamState::for_params(&net.params(), cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let epoch_seed = derive_seed(cfg.seed, STREAM_EPOCH + epoch as u64);
        let (inputs, outputs) = match targets {
            Targets::Fingerprint(fp) => {
                let set = sample_patches(images, fp, cfg, epoch_seed)?;
                (set.inputs, set.targets)
            }
            Targets::Gaussian(sigma) => {
                let coords = sample_positions(images, cfg, epoch_seed)?;
                let normal = Normal::new(0.0, sigma).expect("validated sigma");
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(epoch_seed, STREAM_NOISE));
                let mut ins = Vec::with_capacity(coords.len());
                let mut outs = Vec::with_capacity(coords.len());
                for &(idx, rect) in &coords {
                    let img = &images[idx];
                    let clean = rect.extract(img.data(), img.width(), img.height())?;
                    let noise: Vec<f32> = (0..clean.len())
                        .map(|_| normal.sample(&mut rng) as f32)
                        .collect();
                    ins.push(clean.iter().zip(&noise).map(|(c, n)| c + n).collect());
                    outs.push(noise);
                }
                (ins, outs)
            }
        };
        if inputs.is_empty() {
            return Err(Error::Empty(format!(
                "no usable training patches in epoch {epoch}"
            )));
        }
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            epoch_seed,
            STREAM_SHUFFLE,
        )));
        let lr = cfg.lr_at(epoch);
        adam.lr = lr;
        let (mut loss_sum, mut seen) = (0.0f64, 0usize);
        for (bi, chunk) in order.chunks(cfg.batch).enumerate() {
            let n = chunk.len();
            let mut x = Vec::with_capacity(n * p * p);
            let mut t = Vec::with_capacity(n * p * p);
            for &i in chunk {
                x.extend(inputs[i].iter().map(|v| v * INPUT_SCALE));
                t.extend(outputs[i].iter().map(|v| v * gain));
            }
            let x = Tensor4::from_vec(n, 1, p, p, x)?;
            let t = Tensor4::from_vec(n, 1, p, p, t)?;
            let (y, tape) = net.forward(&x, Mode::Train)?;
            let (loss, grad) = mse_loss(&y, &t)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss {loss} at epoch {epoch}, batch {bi}"
                )));
            }
            let (mut grads, _) = net.backward(&tape, &grad)?;
            if let DecayMode::L2(c) = cfg.decay_mode {
                for (g, w) in grads.tensors.iter_mut().zip(net.params()) {
                    for (gi, wi) in g.iter_mut().zip(w) {
                        *gi += 2.0 * c as f32 * wi;
                    }
                }
            }
            adam.step(&mut net.params_mut(), &grads.tensors)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {bi}: {e}")))?;
            net.update_running_stats(&tape);
            loss_sum += loss * n as f64;
            seen += n;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / seen as f64 / (cfg.target_gain * cfg.target_gain),
            lr,
            patches: inputs.len(),
        };
        progress(&stats);
        history.push(stats);
    }
    if cfg.target_gain != 1.0 {
        let last = net.blocks.last_mut().expect("validated non-empty");
        for v in last
            .conv
            .kernels
            .iter_mut()
            .chain(last.conv.bias.iter_mut())
        {
            *v /= gain;
        }
    }
    Ok(Trained { net, history })
}

/// Fits `net` to map image patches onto co-located fingerprint crops.
pub fn train(
    net: Network<f32>,
    images: &[Image],
    fp: &Fingerprint,
    cfg: &SpnCnnConfig,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<Trained> {
    train_impl(net, images, Targets::Fingerprint(fp), cfg, progress)
}

/// Fits `net` to extract additive Gaussian noise of std `sigma` from `clean + noise`.
pub fn train_gaussian_baseline(
    net: Network<f32>,
    images: &[Image],
    sigma: f64,
    cfg: &SpnCnnConfig,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<Trained> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Degenerate(format!(
            "baseline noise sigma {sigma} must be > 0"
        )));
    }
    train_impl(net, images, Targets::Gaussian(sigma), cfg, progress)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileConfig {
    pub tile: usize,
    pub overlap: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        TileConfig {
            tile: 400,
            overlap: 20,
        }
    }
}

impl TileConfig {
    pub fn validate(&self, receptive_radius: usize) -> Result<()> {
        if self.overlap >= self.tile {
            return Err(Error::InvalidConfig(format!(
                "overlap {} must be below tile {}",
                self.overlap, self.tile
            )));
        }
        if self.overlap < receptive_radius {
            return Err(Error::InvalidConfig(format!(
                "overlap {} below the receptive radius {receptive_radius}",
                self.overlap
            )));
        }
        Ok(())
    }
}

/// Tile start positions covering `0..n`.
fn tile_starts(n: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if n <= tile {
        return vec![0];
    }
    let step = tile - overlap;
    let mut starts: Vec<usize> = (0..)
        .map(|i| i * step)
        .take_while(|&s| s + tile < n)
        .collect();
    starts.push(n - tile);
    starts
}

/// Distance of `i` to the nearest tile edge that is not an image edge.
fn depth_in(i: usize, start: usize, len: usize, n: usize) -> usize {
    let lo = if start == 0 { usize::MAX } else { i - start };
    let hi = if start + len == n {
        usize::MAX
    } else {
        start + len - 1 - i
    };
    lo.min(hi)
}

fn infer_plane(net: &Network<f32>, data: &[f32], w: usize, h: usize) -> Result<Vec<f32>> {
    let x = Tensor4::from_vec(1, 1, h, w, data.iter().map(|v| v * INPUT_SCALE).collect())?;
    let y = net.infer(&x)?;
    if !y.is_finite() {
        return Err(Error::NonFinite("extractor output".into()));
    }
    Ok(y.data)
}

/// Eval-mode extraction; each pixel comes from the tile it is deepest in.
pub fn extract(net: &Network<f32>, img: &Image, tiling: TileConfig) -> Result<NoiseResidual> {
    check_net(net)?;
    tiling.validate(net.receptive_radius())?;
    let (w, h) = img.dims();
    if w == 0 || h == 0 {
        return Err(Error::TooSmall("empty image".into()));
    }
    let xs = tile_starts(w, tiling.tile, tiling.overlap);
    let ys = tile_starts(h, tiling.tile, tiling.overlap);
    if xs.len() == 1 && ys.len() == 1 {
        return NoiseResidual::new(w, h, infer_plane(net, img.data(), w, h)?);
    }
    let mut out = vec![0.0f32; w * h];
    let mut best = vec![0usize; w * h];
    let mut filled = vec![false; w * h];
    for &ty in &ys {
        let th = tiling.tile.min(h);
        for &tx in &xs {
            let tw = tiling.tile.min(w);
            let rect = Rect::new(ty, tx, th, tw);
            let tile = infer_plane(net, &rect.extract(img.data(), w, h)?, tw, th)?;
            for y in ty..ty + th {
                let dy = depth_in(y, ty, th, h);
                for x in tx..tx + tw {
                    let d = dy.min(depth_in(x, tx, tw, w));
                    let i = y * w + x;
                    if !filled[i] || d > best[i] {
                        out[i] = tile[(y - ty) * tw + (x - tx)];
                        best[i] = d;
                        filled[i] = true;
                    }
                }
            }
        }
    }
    NoiseResidual::new(w, h, out)
}

/// Noise extractor used for identification, localization and video.
#[derive(Debug, Clone, PartialEq)]
pub enum Extractor {
    Wavelet(WaveletDenoiserConfig),
    Cnn {
        net: Network<f32>,
        tiling: TileConfig,
        reference: Reference,
    },
}

impl Extractor {
    /// A camera-specific network whose output estimates the fingerprint itself.
    pub fn spncnn(net: Network<f32>) -> Self {
        Extractor::Cnn {
            net,
            tiling: TileConfig::default(),
            reference: Reference::Plain,
        }
    }

    /// A generic noise-extraction network whose output behaves like `x − F(x)`.
    pub fn denoiser_cnn(net: Network<f32>) -> Self {
        Extractor::Cnn {
            net,
            tiling: TileConfig::default(),
            reference: Reference::Modulated,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Extractor::Wavelet(_) => "wavelet",
            Extractor::Cnn { .. } => "spncnn",
        }
    }

    pub fn residual(&self, img: &Image) -> Result<NoiseResidual> {
        match self {
            Extractor::Wavelet(cfg) => residual(img, cfg),
            Extractor::Cnn { net, tiling, .. } => extract(net, img, *tiling),
        }
    }

    /// Template against which this extractor's residuals are scored.
    pub fn reference(&self) -> Reference {
        match self {
            Extractor::Wavelet(_) => Reference::Modulated,
            Extractor::Cnn { reference, .. } => *reference,
        }
    }

    /// Kind of fingerprint obtained by aggregating this extractor's residuals.
    pub fn aggregate_kind(&self) -> FingerprintKind {
        match self {
            Extractor::Wavelet(_) => FingerprintKind::MleEstimate,
            Extractor::Cnn { .. } => FingerprintKind::CnnAggregate,
        }
    }
}

impl Default for Extractor {
    fn default() -> Self {
        Extractor::Wavelet(WaveletDenoiserConfig::default())
    }
}
