//! Sensor pattern noise forensics.
//!
//! PRNU fingerprint estimation from flat-field images, a trainable
//! camera-specific noise extractor (SPN-CNN), and the similarity tests built
//! on top of them: camera identification, manipulation localization and
//! video source attribution. A synthetic imaging model provides ground
//! truth for all of it.

pub mod container;
pub mod denoise;
pub mod detect;
pub mod error;
mod fft;
pub mod fingerprint;
pub mod image;
pub mod localize;
pub mod nn;
pub mod raster;
pub mod signal;
pub mod spncnn;
pub mod synth;
pub mod video;

pub use error::{Error, Result};
pub use image::{load_image, saturation_mask, ColorOrigin, Image, SaturationMask};
pub use raster::{Mask, Rect};
pub use signal::{Fingerprint, FingerprintKind, NoiseResidual};
