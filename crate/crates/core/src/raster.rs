//! Geometry and small helpers shared by every row-major plane.

use crate::error::{Error, Result};

/// Axis-aligned pixel region, `top`/`left` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        Rect {
            top,
            left,
            height,
            width,
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Rect::new(0, 0, height, width)
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn bottom(&self) -> usize {
        self.top + self.height
    }

    pub fn right(&self) -> usize {
        self.left + self.width
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.right() <= width && self.bottom() <= height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        y >= self.top && y < self.bottom() && x >= self.left && x < self.right()
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.left < other.right()
            && other.left < self.right()
            && self.top < other.bottom()
            && other.top < self.bottom()
    }

    pub(crate) fn check(&self, width: usize, height: usize) -> Result<()> {
        if self.fits(width, height) {
            Ok(())
        } else {
            Err(Error::OutOfBounds(format!(
                "{self:?} exceeds {width}x{height}"
            )))
        }
    }

    /// Copies the region out of a row-major plane.
    pub fn extract<T: Copy>(&self, data: &[T], width: usize, height: usize) -> Result<Vec<T>> {
        self.check(width, height)?;
        let mut out = Vec::with_capacity(self.area());
        for y in self.top..self.bottom() {
            out.extend_from_slice(&data[y * width + self.left..y * width + self.right()]);
        }
        Ok(out)
    }
}

/// Boolean per-pixel map, e.g. the ground truth of a manipulated region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_rect(width: usize, height: usize, rect: Rect) -> Self {
        let mut m = Self::empty(width, height);
        for y in rect.top..rect.bottom().min(height) {
            for x in rect.left..rect.right().min(width) {
                m.data[y * width + x] = true;
            }
        }
        m
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of an independent random stream from a parent seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix(splitmix(seed) ^ stream)
}

/// Mean of `data` over the `size`x`size` window centred on every pixel,
/// with the window clipped at the plane border.
pub(crate) fn box_mean(data: &[f64], width: usize, height: usize, size: usize) -> Vec<f64> {
    let r = size / 2;
    let iw = width + 1;
    let mut integral = vec![0.0f64; iw * (height + 1)];
    for y in 0..height {
        let mut row = 0.0;
        for x in 0..width {
            row += data[y * width + x];
            integral[(y + 1) * iw + x + 1] = integral[y * iw + x + 1] + row;
        }
    }
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(height);
        for x in 0..width {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(width);
            let s = integral[y1 * iw + x1] - integral[y0 * iw + x1] - integral[y1 * iw + x0]
                + integral[y0 * iw + x0];
            out[y * width + x] = s / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}
