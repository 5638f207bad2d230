//! 3×3 same-size convolution (cross-correlation, zero padding 1) lowered to
//! GEMM through im2col.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Upper bound on im2col scratch per band, in elements.
const BAND_ELEMS: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    /// `[out_ch][in_ch][3][3]`
    pub kernels: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        ConvLayer {
            in_ch,
            out_ch,
            kernels: vec![T::zero(); out_ch * in_ch * TAPS],
            bias: vec![T::zero(); out_ch],
        }
    }

    /// He-normal kernels, zero bias.
    pub fn he_normal<R: Rng>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        let std = (2.0 / (in_ch * TAPS) as f64).sqrt();
        let kernels = (0..out_ch * in_ch * TAPS)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::from_f64(z * std)
            })
            .collect();
        ConvLayer {
            in_ch,
            out_ch,
            kernels,
            bias: vec![T::zero(); out_ch],
        }
    }

    /// Single-channel layer that passes its input through unchanged.
    pub fn identity() -> Self {
        let mut layer = Self::zeros(1, 1);
        layer.kernels[4] = T::one();
        layer
    }

    pub fn param_count(&self) -> usize {
        self.kernels.len() + self.bias.len()
    }

    pub fn cast<U: Real>(&self) -> ConvLayer<U> {
        ConvLayer {
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            kernels: self
                .kernels
                .iter()
                .map(|&v| U::from_f64(v.as_f64()))
                .collect(),
            bias: self.bias.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Fills `cols` (`in_ch*9` rows × `rows*width` columns) with the padded
/// neighbourhoods of output rows `y0..y0+rows`.
fn im2col<T: Real>(
    input: &[T],
    in_ch: usize,
    height: usize,
    width: usize,
    y0: usize,
    rows: usize,
    cols: &mut [T],
) {
    let n = rows * width;
    for c in 0..in_ch {
        let plane = &input[c * height * width..(c + 1) * height * width];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[(c * TAPS + ky * KERNEL + kx) * n..][..n];
                for r in 0..rows {
                    let dst = &mut row[r * width..(r + 1) * width];
                    let sy = (y0 + r + ky) as isize - 1;
                    if sy < 0 || sy >= height as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * width..(sy as usize + 1) * width];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..width - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..width - 1].copy_from_slice(&src[1..]);
                            dst[width - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back onto the input gradient (adjoint of `im2col`).
fn col2im<T: Real>(
    cols: &[T],
    in_ch: usize,
    height: usize,
    width: usize,
    y0: usize,
    rows: usize,
    grad: &mut [T],
) {
    let n = rows * width;
    for c in 0..in_ch {
        let plane = &mut grad[c * height * width..(c + 1) * height * width];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[(c * TAPS + ky * KERNEL + kx) * n..][..n];
                for r in 0..rows {
                    let src = &row[r * width..(r + 1) * width];
                    let sy = (y0 + r + ky) as isize - 1;
                    if sy < 0 || sy >= height as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * width..(sy as usize + 1) * width];
                    match kx {
                        0 => {
                            for (d, &s) in dst[..width - 1].iter_mut().zip(&src[1..]) {
                                *d = *d + s;
                            }
                        }
                        1 => {
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d = *d + s;
                            }
                        }
                        _ => {
                            for (d, &s) in dst[1..].iter_mut().zip(&src[..width - 1]) {
                                *d = *d + s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn band_rows(in_ch: usize, height: usize, width: usize) -> usize {
    (BAND_ELEMS / (in_ch * TAPS * width).max(1)).clamp(1, height)
}

fn conv_sample<T: Real>(
    layer: &ConvLayer<T>,
    input: &[T],
    height: usize,
    width: usize,
    out: &mut [T],
) {
    let hw = height * width;
    let k = layer.in_ch * TAPS;
    let band = band_rows(layer.in_ch, height, width);
    let mut cols = vec![T::zero(); k * band * width];
    let mut tmp = vec![T::zero(); layer.out_ch * band * width];
    let mut y0 = 0;
    while y0 < height {
        let rows = band.min(height - y0);
        let n = rows * width;
        im2col(
            input,
            layer.in_ch,
            height,
            width,
            y0,
            rows,
            &mut cols[..k * n],
        );
        T::gemm(
            layer.out_ch,
            k,
            n,
            &layer.kernels,
            false,
            &cols[..k * n],
            false,
            &mut tmp[..layer.out_ch * n],
            false,
        );
        for o in 0..layer.out_ch {
            let b = layer.bias[o];
            let dst = &mut out[o * hw + y0 * width..o * hw + y0 * width + n];
            for (d, &s) in dst.iter_mut().zip(&tmp[o * n..(o + 1) * n]) {
                *d = s + b;
            }
        }
        y0 += rows;
    }
}

/// Same-size 3×3 convolution of every sample in the batch.
pub fn conv2d<T: Real>(input: &Tensor4<T>, layer: &ConvLayer<T>) -> Result<Tensor4<T>> {
    if input.channels != layer.in_ch {
        return Err(Error::DimensionMismatch(format!(
            "convolution expects {} input channels, got {}",
            layer.in_ch, input.channels
        )));
    }
    let (h, w) = (input.height, input.width);
    let mut out = Tensor4::zeros(input.batch, layer.out_ch, h, w);
    let out_len = out.sample_len();
    let in_len = input.sample_len();
    if out_len == 0 {
        return Ok(out);
    }
    out.data
        .par_chunks_mut(out_len)
        .zip(input.data.par_chunks(in_len))
        .for_each(|(o, i)| conv_sample(layer, i, h, w, o));
    Ok(out)
}

/// Parameter gradients of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub kernels: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradients of a convolution given the layer input and the output gradient.
/// Per-sample partial sums are reduced in batch order, so the result does not
/// depend on the number of worker threads.
pub fn conv2d_backward<T: Real>(
    input: &Tensor4<T>,
    layer: &ConvLayer<T>,
    grad_out: &Tensor4<T>,
    need_input_grad: bool,
) -> (ConvGrads<T>, Option<Tensor4<T>>) {
    let (h, w) = (input.height, input.width);
    let hw = h * w;
    let k = layer.in_ch * TAPS;
    let in_len = input.sample_len();
    let out_len = grad_out.sample_len();
    let band = band_rows(layer.in_ch, h, w);

    let per_sample: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..input.batch)
        .into_par_iter()
        .map(|b| {
            let x = &input.data[b * in_len..(b + 1) * in_len];
            let go = &grad_out.data[b * out_len..(b + 1) * out_len];
            let mut dk = vec![T::zero(); layer.out_ch * k];
            let mut gin = if need_input_grad {
                vec![T::zero(); in_len]
            } else {
                Vec::new()
            };
            let mut cols = vec![T::zero(); k * band * w];
            let mut gband = vec![T::zero(); layer.out_ch * band * w];
            let mut y0 = 0;
            let mut first = true;
            while y0 < h {
                let rows = band.min(h - y0);
                let n = rows * w;
                // Output gradient rows for this band, contiguous per channel.
                for o in 0..layer.out_ch {
                    gband[o * n..(o + 1) * n]
                        .copy_from_slice(&go[o * hw + y0 * w..o * hw + y0 * w + n]);
                }
                im2col(x, layer.in_ch, h, w, y0, rows, &mut cols[..k * n]);
                // dK (out×k) += G (out×n) · colsᵀ (n×k)
                T::gemm(
                    layer.out_ch,
                    n,
                    k,
                    &gband[..layer.out_ch * n],
                    false,
                    &cols[..k * n],
                    true,
                    &mut dk,
                    !first,
                );
                if need_input_grad {
                    // dcols (k×n) = Kᵀ (k×out) · G (out×n)
                    T::gemm(
                        k,
                        layer.out_ch,
                        n,
                        &layer.kernels,
                        true,
                        &gband[..layer.out_ch * n],
                        false,
                        &mut cols[..k * n],
                        false,
                    );
                    col2im(&cols[..k * n], layer.in_ch, h, w, y0, rows, &mut gin);
                }
                first = false;
                y0 += rows;
            }
            let db = (0..layer.out_ch)
                .map(|o| {
                    go[o * hw..(o + 1) * hw]
                        .iter()
                        .fold(T::zero(), |a, &v| a + v)
                })
                .collect();
            (dk, db, gin)
        })
        .collect();

    let mut grads = ConvGrads {
        kernels: vec![T::zero(); layer.out_ch * k],
        bias: vec![T::zero(); layer.out_ch],
    };
    let mut grad_in = need_input_grad.then(|| Tensor4::zeros(input.batch, input.channels, h, w));
    for (b, (dk, db, gin)) in per_sample.into_iter().enumerate() {
        for (a, v) in grads.kernels.iter_mut().zip(dk) {
            *a = *a + v;
        }
        for (a, v) in grads.bias.iter_mut().zip(db) {
            *a = *a + v;
        }
        if let Some(g) = grad_in.as_mut() {
            g.data[b * in_len..(b + 1) * in_len].copy_from_slice(&gin);
        }
    }
    (grads, grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive(input: &Tensor4<f64>, layer: &ConvLayer<f64>) -> Tensor4<f64> {
        let (h, w) = (input.height, input.width);
        let mut out = Tensor4::zeros(input.batch, layer.out_ch, h, w);
        for b in 0..input.batch {
            for o in 0..layer.out_ch {
                for y in 0..h {
                    for x in 0..w {
                        let mut s = layer.bias[o];
                        for c in 0..layer.in_ch {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = y as isize + ky as isize - 1;
                                    let sx = x as isize + kx as isize - 1;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    let iv = input.data[((b * layer.in_ch + c) * h + sy as usize)
                                        * w
                                        + sx as usize];
                                    s += iv
                                        * layer.kernels[((o * layer.in_ch + c) * 3 + ky) * 3 + kx];
                                }
                            }
                        }
                        out.data[((b * layer.out_ch + o) * h + y) * w + x] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn corner_of_all_ones_kernel_sums_neighbours() {
        let input = Tensor4::from_vec(1, 1, 3, 3, (1..=9).map(|v| v as f64).collect()).unwrap();
        let mut layer = ConvLayer::<f64>::zeros(1, 1);
        layer.kernels.fill(1.0);
        let out = conv2d(&input, &layer).unwrap();
        assert_eq!(out.data[0], 12.0);
        // Centre sees every pixel.
        assert_eq!(out.data[4], 45.0);
    }

    #[test]
    fn identity_kernel_passes_input() {
        let input =
            Tensor4::from_vec(2, 1, 4, 5, (0..40).map(|v| v as f32 * 0.5).collect()).unwrap();
        let out = conv2d(&input, &ConvLayer::identity()).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn all_ones_kernel_on_constant_interior() {
        let input = Tensor4::from_vec(1, 1, 5, 5, vec![2.0f32; 25]).unwrap();
        let mut layer = ConvLayer::<f32>::zeros(1, 1);
        layer.kernels.fill(1.0);
        let out = conv2d(&input, &layer).unwrap();
        assert_eq!(out.data[2 * 5 + 2], 18.0);
    }

    #[test]
    fn matches_naive_on_random_multichannel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = ConvLayer::<f64>::he_normal(3, 4, &mut rng);
        let data = (0..2 * 3 * 6 * 7)
            .map(|_| rng.random::<f64>() - 0.5)
            .collect();
        let input = Tensor4::from_vec(2, 3, 6, 7, data).unwrap();
        let fast = conv2d(&input, &layer).unwrap();
        let slow = naive(&input, &layer);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let input = Tensor4::<f32>::zeros(1, 2, 4, 4);
        assert!(conv2d(&input, &ConvLayer::identity()).is_err());
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), g> = <x, dx> + bias term, checked on the linear map.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut layer = ConvLayer::<f64>::he_normal(2, 3, &mut rng);
        layer.bias.fill(0.0);
        let x =
            Tensor4::from_vec(1, 2, 5, 4, (0..40).map(|_| rng.random::<f64>()).collect()).unwrap();
        let g =
            Tensor4::from_vec(1, 3, 5, 4, (0..60).map(|_| rng.random::<f64>()).collect()).unwrap();
        let y = conv2d(&x, &layer).unwrap();
        let (_, dx) = conv2d_backward(&x, &layer, &g, true);
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x
            .data
            .iter()
            .zip(&dx.unwrap().data)
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    proptest::proptest! {
        #[test]
        fn translation_equivariant_away_from_borders(seed in 0u64..500, dy in 0usize..4, dx in 0usize..4) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let layer = ConvLayer::<f32>::he_normal(2, 3, &mut rng);
            let (h, w) = (12, 13);
            let base: Vec<f32> = (0..2 * (h + dy) * (w + dx)).map(|_| rng.random_range(-1.0..1.0)).collect();
            let window = |oy: usize, ox: usize| {
                let mut d = Vec::with_capacity(2 * h * w);
                for c in 0..2 {
                    for y in 0..h {
                        let row = (c * (h + dy) + y + oy) * (w + dx) + ox;
                        d.extend_from_slice(&base[row..row + w]);
                    }
                }
                Tensor4::from_vec(1, 2, h, w, d).unwrap()
            };
            let a = conv2d(&window(0, 0), &layer).unwrap();
            let b = conv2d(&window(dy, dx), &layer).unwrap();
            for o in 0..3 {
                for y in 1..h - 1 - dy {
                    for x in 1..w - 1 - dx {
                        let va = a.data[(o * h + y + dy) * w + x + dx];
                        let vb = b.data[(o * h + y) * w + x];
                        proptest::prop_assert_eq!(va.to_bits(), vb.to_bits());
                    }
                }
            }
        }
    }
}
