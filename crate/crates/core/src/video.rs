//! Video source attribution: still-to-video fingerprint alignment, frame
//! aggregation and per-frame scoring.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::detect::{pce, PceSearch, PCE_EXCLUSION_RADIUS};
use crate::error::{Error, Result};
use crate::fingerprint::MleAccumulator;
use crate::image::{load_image, Image};
use crate::raster::Rect;
use crate::signal::{Fingerprint, NoiseResidual};
use crate::spncnn::Extractor;

/// Default sidecar file name looked up inside a frame directory.
pub const SIDECAR_NAME: &str = "frames.csv";

/// Frames whose residuals are extracted concurrently before accumulation.
const EXTRACT_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FrameType {
    I,
    Other,
}

impl FrameType {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameType::I => "I",
            FrameType::Other => "other",
        }
    }
}

impl fmt::Display for FrameType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FrameType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "i" => Ok(FrameType::I),
            "other" | "p" | "b" => Ok(FrameType::Other),
            t => Err(Error::InvalidConfig(format!("unknown frame type {t:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
enum Frames {
    Files(Vec<PathBuf>),
    Memory(Vec<Image>),
}

/// Temporally ordered frames sharing one geometry.
#[derive(Debug, Clone)]
pub struct FrameSet {
    frames: Frames,
    frame_types: Option<Vec<FrameType>>,
    dims: (usize, usize),
}

impl FrameSet {
    pub fn from_images(images: Vec<Image>) -> Result<Self> {
        let dims = images
            .first()
            .ok_or_else(|| Error::Empty("frame set has no frames".into()))?
            .dims();
        if let Some(bad) = images.iter().position(|f| f.dims() != dims) {
            return Err(Error::DimensionMismatch(format!(
                "frame {bad} is {:?}, frame 0 is {dims:?}",
                images[bad].dims()
            )));
        }
        Ok(FrameSet {
            frames: Frames::Memory(images),
            frame_types: None,
            dims,
        })
    }

    /// Frames read lazily from files; the first one fixes the geometry.
    pub fn from_paths(paths: Vec<PathBuf>) -> Result<Self> {
        let first = paths
            .first()
            .ok_or_else(|| Error::Empty("frame set has no frames".into()))?;
        let dims = load_image(first)?.dims();
        Ok(FrameSet {
            frames: Frames::Files(paths),
            frame_types: None,
            dims,
        })
    }

    /// All PNG and PGM files of a directory in file-name order, typed by the
    /// directory's sidecar CSV when present.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm"))
            })
            .collect();
        paths.sort();
        let set = FrameSet::from_paths(paths)?;
        let sidecar = dir.join(SIDECAR_NAME);
        if sidecar.is_file() {
            set.with_types_csv(sidecar)
        } else {
            Ok(set)
        }
    }

    pub fn with_types(mut self, types: Vec<FrameType>) -> Result<Self> {
        if types.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} frame types for {} frames",
                types.len(),
                self.len()
            )));
        }
        self.frame_types = Some(types);
        Ok(self)
    }

    /// Reads `frame_index,frame_type` rows; every frame must be listed once.
    pub fn with_types_csv(self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let invalid = |msg: String| Error::InvalidConfig(format!("{}: {msg}", path.display()));
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| invalid(e.to_string()))?;
        let mut types = vec![None; self.len()];
        for record in reader.records() {
            let record = record.map_err(|e| invalid(e.to_string()))?;
            if record.len() != 2 {
                return Err(invalid(format!("expected 2 fields, got {}", record.len())));
            }
            let idx: usize = record[0]
                .parse()
                .map_err(|_| invalid(format!("bad frame index {:?}", &record[0])))?;
            let ty: FrameType = record[1].parse()?;
            let slot = types.get_mut(idx).ok_or_else(|| {
                invalid(format!("frame index {idx} beyond {} frames", self.len()))
            })?;
            if slot.replace(ty).is_some() {
                return Err(invalid(format!("frame index {idx} listed twice")));
            }
        }
        let types = types
            .into_iter()
            .enumerate()
            .map(|(i, t)| t.ok_or_else(|| invalid(format!("frame {i} has no type"))))
            .collect::<Result<Vec<_>>>()?;
        self.with_types(types)
    }

    pub fn len(&self) -> usize {
        match &self.frames {
            Frames::Files(p) => p.len(),
            Frames::Memory(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    /// Backing files, for sets read from disk.
    pub fn paths(&self) -> Option<&[PathBuf]> {
        match &self.frames {
            Frames::Files(p) => Some(p),
            Frames::Memory(_) => None,
        }
    }

    pub fn frame_types(&self) -> Option<&[FrameType]> {
        self.frame_types.as_deref()
    }

    pub fn frame_type(&self, i: usize) -> Option<FrameType> {
        self.frame_types.as_ref().and_then(|t| t.get(i).copied())
    }

    pub fn frame(&self, i: usize) -> Result<Image> {
        let img = match &self.frames {
            Frames::Files(p) => {
                let path = p
                    .get(i)
                    .ok_or_else(|| Error::OutOfBounds(format!("frame {i} of {}", p.len())))?;
                load_image(path)?
            }
            Frames::Memory(m) => m
                .get(i)
                .cloned()
                .ok_or_else(|| Error::OutOfBounds(format!("frame {i} of {}", m.len())))?,
        };
        if img.dims() != self.dims {
            return Err(Error::DimensionMismatch(format!(
                "frame {i} is {:?}, expected {:?}",
                img.dims(),
                self.dims
            )));
        }
        Ok(img)
    }
}

/// Downscale factor `num / den` with `num ≤ den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scale {
    pub num: usize,
    pub den: usize,
}

impl Scale {
    pub const IDENTITY: Scale = Scale { num: 1, den: 1 };

    pub fn new(num: usize, den: usize) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return Err(Error::InvalidConfig(format!(
                "scale {num}/{den} is not a downscale factor"
            )));
        }
        let g = gcd(num, den);
        Ok(Scale {
            num: num / g,
            den: den / g,
        })
    }

    /// The integer block size when the factor is `1/n`.
    pub fn block(self) -> Option<usize> {
        let s = Scale::new(self.num, self.den).ok()?;
        (s.num == 1).then_some(s.den)
    }

    fn apply(self, n: usize) -> Result<usize> {
        if !(n * self.num).is_multiple_of(self.den) {
            return Err(Error::InvalidConfig(format!(
                "{n} pixels do not scale by {}/{} to a whole number",
                self.num, self.den
            )));
        }
        Ok(n * self.num / self.den)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Geometric mapping from still-sensor space to video space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignmentParams {
    /// `(top, left)` of the crop in still pixels.
    pub crop_offset: (usize, usize),
    /// `(height, width)` of the crop in still pixels.
    pub crop_size: (usize, usize),
    pub scale: Scale,
}

impl AlignmentParams {
    pub fn identity(width: usize, height: usize) -> Self {
        AlignmentParams {
            crop_offset: (0, 0),
            crop_size: (height, width),
            scale: Scale::IDENTITY,
        }
    }

    /// The centered crop of a `still` sensor that maps onto a `video` frame.
    /// Both dims are `(width, height)`.
    pub fn centered(still: (usize, usize), video: (usize, usize), scale: Scale) -> Result<Self> {
        let scale = Scale::new(scale.num, scale.den)?;
        let unscale = |n: usize| {
            if !(n * scale.den).is_multiple_of(scale.num) {
                Err(Error::InvalidConfig(format!(
                    "{n} video pixels have no whole-pixel preimage"
                )))
            } else {
                Ok(n * scale.den / scale.num)
            }
        };
        let (cw, ch) = (unscale(video.0)?, unscale(video.1)?);
        if cw > still.0 || ch > still.1 {
            return Err(Error::OutOfBounds(format!(
                "video needs a {cw}x{ch} crop of a {}x{} sensor",
                still.0, still.1
            )));
        }
        Ok(AlignmentParams {
            crop_offset: ((still.1 - ch) / 2, (still.0 - cw) / 2),
            crop_size: (ch, cw),
            scale,
        })
    }

    /// `(width, height)` of the video frame these params produce.
    pub fn output_dims(&self) -> Result<(usize, usize)> {
        let scale = Scale::new(self.scale.num, self.scale.den)?;
        Ok((
            scale.apply(self.crop_size.1)?,
            scale.apply(self.crop_size.0)?,
        ))
    }

    fn crop_rect(&self) -> Rect {
        Rect::new(
            self.crop_offset.0,
            self.crop_offset.1,
            self.crop_size.0,
            self.crop_size.1,
        )
    }
}

/// Crops a still-image fingerprint and resamples it to video geometry.
pub fn align_fingerprint(fp_still: &Fingerprint, params: &AlignmentParams) -> Result<Fingerprint> {
    let (ow, oh) = params.output_dims()?;
    if ow == 0 || oh == 0 {
        return Err(Error::InvalidConfig(
            "alignment produces an empty frame".into(),
        ));
    }
    let rect = params.crop_rect();
    if !rect.fits(fp_still.width(), fp_still.height()) {
        return Err(Error::OutOfBounds(format!(
            "crop {rect:?} exceeds a {}x{} fingerprint",
            fp_still.width(),
            fp_still.height()
        )));
    }
    let crop = fp_still.crop(rect)?;
    let data = match params.scale.block() {
        Some(1) => return Ok(crop),
        Some(b) => block_average(crop.data(), crop.width(), b, ow, oh),
        None => bilinear(crop.data(), crop.width(), crop.height(), ow, oh),
    };
    Fingerprint::new(ow, oh, data, fp_still.kind())
}

fn block_average(src: &[f32], sw: usize, b: usize, ow: usize, oh: usize) -> Vec<f32> {
    let inv = 1.0 / (b * b) as f64;
    let mut out = Vec::with_capacity(ow * oh);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut s = 0.0f64;
            for y in oy * b..(oy + 1) * b {
                s += src[y * sw + ox * b..y * sw + (ox + 1) * b]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>();
            }
            out.push((s * inv) as f32);
        }
    }
    out
}

/// Pixel-center aligned bilinear resampling with edge clamping.
fn bilinear(src: &[f32], sw: usize, sh: usize, ow: usize, oh: usize) -> Vec<f32> {
    let coord = |o: usize, on: usize, sn: usize| {
        let c = ((o as f64 + 0.5) * sn as f64 / on as f64 - 0.5).clamp(0.0, (sn - 1) as f64);
        let i0 = c.floor() as usize;
        (i0, (i0 + 1).min(sn - 1), c - i0 as f64)
    };
    let mut out = Vec::with_capacity(ow * oh);
    for oy in 0..oh {
        let (y0, y1, fy) = coord(oy, oh, sh);
        for ox in 0..ow {
            let (x0, x1, fx) = coord(ox, ow, sw);
            let p = |x: usize, y: usize| src[y * sw + x] as f64;
            let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
            let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    out
}

fn check_first_n(frames: &FrameSet, first_n: usize) -> Result<()> {
    if first_n == 0 {
        return Err(Error::Empty("aggregate over zero frames".into()));
    }
    if first_n > frames.len() {
        return Err(Error::OutOfBounds(format!(
            "first {first_n} of {} frames",
            frames.len()
        )));
    }
    Ok(())
}

/// Extracts residuals for `range` concurrently and absorbs them in frame order.
fn absorb_frames(
    acc: &mut MleAccumulator,
    frames: &FrameSet,
    extractor: &Extractor,
    range: std::ops::Range<usize>,
) -> Result<()> {
    let idx: Vec<usize> = range.collect();
    for chunk in idx.chunks(EXTRACT_CHUNK) {
        let pairs = chunk
            .par_iter()
            .map(|&i| {
                let img = frames.frame(i)?;
                let w = extractor.residual(&img)?;
                Ok((img, w))
            })
            .collect::<Result<Vec<_>>>()?;
        for (img, w) in &pairs {
            acc.absorb(img, w)?;
        }
    }
    Ok(())
}

/// MLE fingerprint of the first `first_n` frames.
pub fn aggregate_video_fp(
    frames: &FrameSet,
    extractor: &Extractor,
    first_n: usize,
) -> Result<Fingerprint> {
    check_first_n(frames, first_n)?;
    let mut acc = MleAccumulator::new();
    absorb_frames(&mut acc, frames, extractor, 0..first_n)?;
    Ok(acc.finalize()?.with_kind(extractor.aggregate_kind()))
}

fn pce_against(fp: &Fingerprint, fp_video: &Fingerprint) -> Result<f64> {
    if fp.dims() != fp_video.dims() {
        return Err(Error::DimensionMismatch(format!(
            "aggregate {:?} vs video fingerprint {:?}",
            fp.dims(),
            fp_video.dims()
        )));
    }
    let w = NoiseResidual::new(fp.width(), fp.height(), fp.data().to_vec())?;
    Ok(pce(&w, fp_video.data(), PceSearch::None, PCE_EXCLUSION_RADIUS)?.value)
}

/// PCE of the aggregate over the first `n` frames for each `n` of the grid.
pub fn pce_vs_n(
    frames: &FrameSet,
    fp_video: &Fingerprint,
    extractor: &Extractor,
    n_grid: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if n_grid.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::InvalidConfig(format!(
            "frame grid {n_grid:?} is not increasing"
        )));
    }
    if let Some(&last) = n_grid.last() {
        check_first_n(frames, n_grid[0])?;
        check_first_n(frames, last)?;
    }
    let mut acc = MleAccumulator::new();
    let mut done = 0;
    let mut curve = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        absorb_frames(&mut acc, frames, extractor, done..n)?;
        done = n;
        curve.push((n, pce_against(&acc.finalize()?, fp_video)?));
    }
    Ok(curve)
}

pub fn curve_to_csv(curve: &[(usize, f64)]) -> String {
    let mut s = String::from("n,pce\n");
    for (n, v) in curve {
        s.push_str(&format!("{n},{v}\n"));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameScore {
    pub index: usize,
    pub frame_type: Option<FrameType>,
    pub pce: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameReport {
    pub scores: Vec<FrameScore>,
    /// Mean PCE per frame-type group, `"all"` when frames are untyped.
    pub summary: BTreeMap<String, f64>,
}

impl FrameReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame_index,frame_type,pce\n");
        for f in &self.scores {
            let t = f.frame_type.map_or("all", FrameType::as_str);
            s.push_str(&format!("{},{t},{}\n", f.index, f.pce));
        }
        s
    }
}

/// Single-frame PCE of every frame against the video fingerprint.
pub fn per_frame_scores(
    frames: &FrameSet,
    fp_video: &Fingerprint,
    extractor: &Extractor,
) -> Result<FrameReport> {
    if frames.dims() != fp_video.dims() {
        return Err(Error::DimensionMismatch(format!(
            "frames {:?} vs video fingerprint {:?}",
            frames.dims(),
            fp_video.dims()
        )));
    }
    let reference = extractor.reference();
    let scores = (0..frames.len())
        .into_par_iter()
        .map(|i| {
            let img = frames.frame(i)?;
            let w = extractor.residual(&img)?;
            let t = reference.template(fp_video, &img)?;
            Ok(FrameScore {
                index: i,
                frame_type: frames.frame_type(i),
                pce: pce(&w, &t, PceSearch::None, PCE_EXCLUSION_RADIUS)?.value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut groups: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for f in &scores {
        let key = f.frame_type.map_or("all", FrameType::as_str).to_string();
        let g = groups.entry(key).or_default();
        g.0 += f.pce;
        g.1 += 1;
    }
    let summary = groups
        .into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect();
    Ok(FrameReport { scores, summary })
}
