use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "spn", version, about = "Sensor pattern noise forensics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Render synthetic images through a PRNU camera model.
    Synth(SynthArgs),
    /// Estimate a camera fingerprint from a directory of images.
    Fingerprint(FingerprintArgs),
    /// Extract the noise residual of one image.
    Residual(ResidualArgs),
    /// Train an SPN-CNN extractor or a Gaussian-noise baseline.
    Train(TrainArgs),
    /// Run a trained network over one image with tiling.
    Extract(ExtractArgs),
    /// Score probes against a fingerprint (NCC and PCE).
    Identify(IdentifyArgs),
    /// ROC, AUC and median tables from score files.
    Evaluate(EvaluateArgs),
    /// Sliding-window tamper localization heatmap.
    Localize(LocalizeArgs),
    /// Video source attribution from a frame directory.
    VideoAttr(VideoAttrArgs),
    /// Finite-difference check of the network gradients.
    Gradcheck(GradcheckArgs),
    /// Re-execute a run from its manifest and verify its outputs.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Common {
    /// Root seed for every random stream.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// key=value file whose entries mirror the long flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Manifest path; defaults to one derived from the output path.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    Flat,
    Gradient,
    Texture,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TamperKind {
    None,
    Foreign,
    Smooth,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImageFormat {
    Png,
    Pgm,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorKind {
    Wavelet,
    /// Camera-specific network scored against the plain fingerprint.
    Spncnn,
    /// Generic noise-extraction network scored against the modulated fingerprint.
    Denoiser,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    Plain,
    Modulated,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchKind {
    None,
    Full,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayKind {
    LrStep,
    L2,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKindArg {
    Ncc,
    Pce,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Label {
    H0,
    H1,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ExtractorArgs {
    #[arg(long, value_enum, default_value_t = ExtractorKind::Wavelet)]
    pub extractor: ExtractorKind,
    /// SPNN network for the spncnn and denoiser extractors.
    #[arg(long)]
    pub net: Option<PathBuf>,
    /// Override the extractor's default reference template.
    #[arg(long, value_enum)]
    pub reference: Option<ReferenceKind>,
    #[arg(long, default_value_t = 400)]
    pub tile: usize,
    #[arg(long, default_value_t = 20)]
    pub overlap: usize,
    /// Wavelet decomposition levels.
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    /// Wavelet noise standard deviation in intensity units.
    #[arg(long, default_value_t = 3.0)]
    pub sigma0: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    /// PRNU standard deviation of a generated camera.
    #[arg(long, default_value_t = 0.02)]
    pub strength: f64,
    #[arg(long, default_value_t = 2.0)]
    pub theta_sigma: f64,
    /// Expose through this fingerprint instead of generating a camera.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SceneKind::Flat)]
    pub scene: SceneKind,
    #[arg(long, default_value_t = 128.0)]
    pub level: f64,
    #[arg(long, default_value_t = 64.0)]
    pub gradient_from: f64,
    #[arg(long, default_value_t = 192.0)]
    pub gradient_to: f64,
    #[arg(long, default_value_t = 4)]
    pub octaves: u32,
    #[arg(long, default_value_t = 60.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 128.0)]
    pub base: f64,
    #[arg(long, value_enum, default_value_t = TamperKind::None)]
    pub tamper: TamperKind,
    /// Side of the square tampered region.
    #[arg(long, default_value_t = 0)]
    pub tamper_size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub tamper_strength: f64,
    #[arg(long, default_value_t = 2.0)]
    pub tamper_sigma: f64,
    /// Mark every n-th image as an I-frame and degrade the others.
    #[arg(long, default_value_t = 0)]
    pub gop: usize,
    #[arg(long, default_value_t = 0.8)]
    pub degrade_sigma: f64,
    #[arg(long, value_enum, default_value_t = ImageFormat::Png)]
    pub format: ImageFormat,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FingerprintArgs {
    /// Directory of PNG/PGM images.
    #[arg(long)]
    pub images: PathBuf,
    /// Output SPNF file.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
    /// Skip the row/column zero-mean cleanup.
    #[arg(long)]
    pub no_clean: bool,
    /// Add the frequency-domain Wiener cleanup.
    #[arg(long)]
    pub wiener_dft: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ResidualArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Output plane in the SPNF container.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    /// Directory of training images.
    #[arg(long)]
    pub images: PathBuf,
    /// Target fingerprint (SPNF); not used with --baseline-sigma.
    #[arg(long)]
    pub fp: Option<PathBuf>,
    /// Output SPNN file.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss history CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Train a Gaussian-noise baseline with this noise std instead.
    #[arg(long)]
    pub baseline_sigma: Option<f64>,
    #[arg(long, default_value_t = 17)]
    pub depth: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 40)]
    pub patch: usize,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.2)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = 30)]
    pub decay_period: usize,
    #[arg(long, value_enum, default_value_t = DecayKind::LrStep)]
    pub decay_mode: DecayKind,
    /// L2 coefficient for `--decay-mode l2`.
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_patches: usize,
    #[arg(long, default_value_t = 1.0)]
    pub target_gain: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Output plane in the SPNF container.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub tile: usize,
    #[arg(long, default_value_t = 20)]
    pub overlap: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct IdentifyArgs {
    /// Probe image or directory of probes.
    #[arg(long)]
    pub probe: PathBuf,
    #[arg(long)]
    pub fp: PathBuf,
    /// Output scores CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
    #[arg(long, value_enum, default_value_t = SearchKind::None)]
    pub search: SearchKind,
    /// Camera name written to the scores; defaults to the fingerprint file stem.
    #[arg(long)]
    pub camera_id: Option<String>,
    /// Ground-truth label written to every row.
    #[arg(long, value_enum)]
    pub label: Option<Label>,
    /// `top,left` of the probe within the fingerprint when the probe is smaller.
    #[arg(long)]
    pub offset: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EvaluateArgs {
    /// Comma-separated score CSV files.
    #[arg(long)]
    pub scores: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ScoreKindArg::Ncc)]
    pub kind: ScoreKindArg,
    /// Also report the threshold reaching this false-positive rate.
    #[arg(long)]
    pub fpr: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub fp: PathBuf,
    /// Pristine image or directory used to fit the correlation predictor.
    #[arg(long)]
    pub train: PathBuf,
    /// Ground-truth mask (nonzero = tampered) for a pixel AUC.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
    #[arg(long, default_value_t = 64)]
    pub window: usize,
    #[arg(long, default_value_t = 8)]
    pub stride: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct VideoAttrArgs {
    /// Directory of frames, optionally with a frames.csv sidecar.
    #[arg(long)]
    pub frames: PathBuf,
    /// Still-image (or already aligned) fingerprint.
    #[arg(long)]
    pub fp: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
    /// `top,left,height,width` crop in still pixels; default is the full fingerprint.
    #[arg(long)]
    pub crop: Option<String>,
    /// Downscale factor `num/den`.
    #[arg(long, default_value = "1/1")]
    pub scale: String,
    /// Increasing frame counts for the PCE curve.
    #[arg(long, default_value = "1,5,10,20")]
    pub grid: String,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GradcheckArgs {
    /// Output JSON report.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    /// Side of the random input planes.
    #[arg(long, default_value_t = 8)]
    pub size: usize,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Fingerprint(_) => "fingerprint",
            Command::Residual(_) => "residual",
            Command::Train(_) => "train",
            Command::Extract(_) => "extract",
            Command::Identify(_) => "identify",
            Command::Evaluate(_) => "evaluate",
            Command::Localize(_) => "localize",
            Command::VideoAttr(_) => "video-attr",
            Command::Gradcheck(_) => "gradcheck",
            Command::Replay(_) => "replay",
        }
    }

    pub fn common(&self) -> Option<&Common> {
        match self {
            Command::Synth(a) => Some(&a.common),
            Command::Fingerprint(a) => Some(&a.common),
            Command::Residual(a) => Some(&a.common),
            Command::Train(a) => Some(&a.common),
            Command::Extract(a) => Some(&a.common),
            Command::Identify(a) => Some(&a.common),
            Command::Evaluate(a) => Some(&a.common),
            Command::Localize(a) => Some(&a.common),
            Command::VideoAttr(a) => Some(&a.common),
            Command::Gradcheck(a) => Some(&a.common),
            Command::Replay(_) => None,
        }
    }

    /// Manifest location when `--manifest` is not given.
    pub fn default_manifest(&self) -> Option<PathBuf> {
        let file = |p: &PathBuf| {
            let mut s = p.clone().into_os_string();
            s.push(".manifest.json");
            PathBuf::from(s)
        };
        let dir = |p: &PathBuf| p.join("manifest.json");
        match self {
            Command::Synth(a) => Some(dir(&a.out)),
            Command::Fingerprint(a) => Some(file(&a.out)),
            Command::Residual(a) => Some(file(&a.out)),
            Command::Train(a) => Some(file(&a.out)),
            Command::Extract(a) => Some(file(&a.out)),
            Command::Identify(a) => Some(file(&a.out)),
            Command::Evaluate(a) => Some(dir(&a.out)),
            Command::Localize(a) => Some(dir(&a.out)),
            Command::VideoAttr(a) => Some(dir(&a.out)),
            Command::Gradcheck(a) => Some(file(&a.out)),
            Command::Replay(_) => None,
        }
    }
}
