//! Grayscale intensity rasters and 8-bit image file I/O (binary PGM and PNG).

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::Rect;

/// ITU-R BT.601 luma weights for R, G, B.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Default intensity at which a pixel counts as saturated.
pub const SATURATION_LEVEL: f32 = 253.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorOrigin {
    NativeGray,
    LumaConverted,
}

/// Row-major grayscale raster with finite intensities in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
    origin: ColorOrigin,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        Self::with_origin(width, height, data, ColorOrigin::NativeGray)
    }

    pub fn with_origin(
        width: usize,
        height: usize,
        data: Vec<f32>,
        origin: ColorOrigin,
    ) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a {width}x{height} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::InvalidConfig(format!(
                "intensity {v} outside [0, 255]"
            )));
        }
        Ok(Image {
            width,
            height,
            data,
            origin,
        })
    }

    /// Builds an image from arbitrary values, clamping them into `[0, 255]`.
    /// Non-finite values map to 0.
    pub fn from_clamped(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_finite() {
                v.clamp(0.0, 255.0)
            } else {
                0.0
            };
        }
        Self::new(width, height, data)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
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

    pub fn origin(&self) -> ColorOrigin {
        self.origin
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn crop(&self, rect: Rect) -> Result<Image> {
        let data = rect.extract(&self.data, self.width, self.height)?;
        Ok(Image {
            width: rect.width,
            height: rect.height,
            data,
            origin: self.origin,
        })
    }
}

/// Per-pixel saturation flags for an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SaturationMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl SaturationMask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&s| s).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.data.len() as f64
        }
    }
}

/// Marks every pixel whose intensity reaches `level`.
pub fn saturation_mask(img: &Image, level: f32) -> SaturationMask {
    SaturationMask {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|&v| v >= level).collect(),
    }
}

fn luma(r: u8, g: u8, b: u8) -> f32 {
    let [wr, wg, wb] = LUMA_WEIGHTS;
    (wr * r as f64 + wg * g as f64 + wb * b as f64) as f32
}

/// Reads an 8-bit grayscale or RGB image. The format is chosen from the file
/// signature, not the extension.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        decode_pgm(&bytes, path)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(&bytes, path)
    } else {
        Err(Error::UnsupportedImage {
            path: path.to_path_buf(),
            reason: "neither binary PGM (P5) nor PNG".into(),
        })
    }
}

fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Image> {
    let unsupported = |reason: &str| Error::UnsupportedImage {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    // Header: magic, width, height, maxval separated by whitespace, with
    // '#' comments running to end of line, then exactly one whitespace byte.
    let mut fields = Vec::with_capacity(3);
    let mut pos = 2;
    while fields.len() < 3 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(unsupported("malformed PGM header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).map_err(|_| unsupported("header"))?;
        let value: usize = text
            .parse()
            .map_err(|_| unsupported("malformed PGM header"))?;
        fields.push(value);
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval == 0 || maxval > 255 {
        return Err(unsupported("only 8-bit PGM is supported"));
    }
    pos += 1;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| unsupported("dimensions overflow"))?;
    let payload = bytes
        .get(pos..pos + n)
        .ok_or_else(|| unsupported("truncated PGM payload"))?;
    let data = payload.iter().map(|&b| b as f32).collect();
    Image::new(width, height, data)
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<Image> {
    let bad = |reason: String| Error::UnsupportedImage {
        path: path.to_path_buf(),
        reason,
    };
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| bad("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| bad(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(bad(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(bad("indexed color is not supported".into())),
    };
    let mut data = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        for px in row[..w * channels].chunks_exact(channels) {
            data.push(if channels >= 3 {
                luma(px[0], px[1], px[2])
            } else {
                px[0] as f32
            });
        }
    }
    let origin = if channels >= 3 {
        ColorOrigin::LumaConverted
    } else {
        ColorOrigin::NativeGray
    };
    Image::with_origin(w, h, data, origin)
}

fn quantize(img: &Image) -> Vec<u8> {
    img.data
        .iter()
        .map(|&v| v.round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Writes an 8-bit grayscale PNG, rounding intensities to the nearest level.
pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    write_gray_png(&quantize(img), img.width, img.height, path.as_ref())
}

pub(crate) fn write_gray_png(
    pixels: &[u8],
    width: usize,
    height: usize,
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(to_io)?;
    writer.write_image_data(pixels).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

/// Writes a binary PGM (P5), rounding intensities to the nearest level.
pub fn save_pgm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    write_gray_pgm(&quantize(img), img.width, img.height, path.as_ref())
}

pub(crate) fn write_gray_pgm(
    pixels: &[u8],
    width: usize,
    height: usize,
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P5\n{width} {height}\n255\n")
        .and_then(|_| w.write_all(pixels))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Saves by extension: `.pgm` as PGM, anything else as PNG.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("pgm") => save_pgm(img, path),
        _ => save_png(img, path),
    }
}
