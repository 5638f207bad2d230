//! Fingerprints and noise residuals: zero-mean real-valued planes that live
//! on the sensor grid.

use crate::error::{Error, Result};
use crate::raster::Rect;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FingerprintKind {
    GroundTruth,
    MleEstimate,
    CnnAggregate,
}

impl FingerprintKind {
    pub fn tag(self) -> u8 {
        match self {
            FingerprintKind::GroundTruth => 0,
            FingerprintKind::MleEstimate => 1,
            FingerprintKind::CnnAggregate => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(FingerprintKind::GroundTruth),
            1 => Some(FingerprintKind::MleEstimate),
            2 => Some(FingerprintKind::CnnAggregate),
            _ => None,
        }
    }
}

fn check_plane(width: usize, height: usize, data: &[f32]) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "{} samples for a {width}x{height} plane",
            data.len()
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("plane contains NaN or infinity".into()));
    }
    Ok(())
}

/// PRNU factor estimate (or ground truth) over a sensor region.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    width: usize,
    height: usize,
    data: Vec<f32>,
    kind: FingerprintKind,
}

impl Fingerprint {
    pub fn new(width: usize, height: usize, data: Vec<f32>, kind: FingerprintKind) -> Result<Self> {
        check_plane(width, height, &data)?;
        Ok(Fingerprint {
            width,
            height,
            data,
            kind,
        })
    }

    pub fn zeros(width: usize, height: usize, kind: FingerprintKind) -> Self {
        Fingerprint {
            width,
            height,
            data: vec![0.0; width * height],
            kind,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn kind(&self) -> FingerprintKind {
        self.kind
    }

    pub fn with_kind(mut self, kind: FingerprintKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn crop(&self, rect: Rect) -> Result<Fingerprint> {
        let data = rect.extract(&self.data, self.width, self.height)?;
        Ok(Fingerprint {
            width: rect.width,
            height: rect.height,
            data,
            kind: self.kind,
        })
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Noise signal extracted from a single probe image.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseResidual {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl NoiseResidual {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        check_plane(width, height, &data)?;
        Ok(NoiseResidual {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn crop(&self, rect: Rect) -> Result<NoiseResidual> {
        let data = rect.extract(&self.data, self.width, self.height)?;
        Ok(NoiseResidual {
            width: rect.width,
            height: rect.height,
            data,
        })
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Sample mean and (population) standard deviation.
pub fn mean_std(data: &[f32]) -> (f64, f64) {
    let n = data.len().max(1) as f64;
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
