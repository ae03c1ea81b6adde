//! Separable bicubic resampling (Keys kernel, `a = -0.5`).
//!
//! Output pixel `o` samples the input at `(o + 0.5) * in / out - 0.5`
//! (pixel centers aligned), taps outside the image are clamped to the edge,
//! and no anti-aliasing prefilter is applied when downscaling.

use super::ImageBuffer;
use crate::error::{Error, Result};

pub const A: f64 = -0.5;

/// Cubic convolution kernel.
pub fn kernel(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Row-major `[n_out, n_in]` interpolation matrix along one axis.
pub fn weights(n_in: usize, n_out: usize) -> Vec<f64> {
    let mut m = vec![0.0; n_out * n_in];
    let ratio = n_in as f64 / n_out as f64;
    let last = n_in as isize - 1;
    for o in 0..n_out {
        let src = (o as f64 + 0.5) * ratio - 0.5;
        let base = src.floor() as isize;
        for k in -1..=2 {
            let idx = base + k;
            let w = kernel(src - idx as f64);
            m[o * n_in + idx.clamp(0, last) as usize] += w;
        }
    }
    m
}

/// Resizes to `out_h x out_w`; the result is clamped to `[0, range]`.
pub fn bicubic_resize(img: &ImageBuffer, out_h: usize, out_w: usize) -> Result<ImageBuffer> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Contract(format!("bicubic output dims must be >= 1, got {out_h}x{out_w}")));
    }
    let (h, w) = img.dims();
    let ry = weights(h, out_h);
    let rx = weights(w, out_w);
    // rows first: tmp[H, out_w] = X · Rxᵀ
    let mut tmp = vec![0.0; h * out_w];
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        for ox in 0..out_w {
            let wr = &rx[ox * w..(ox + 1) * w];
            tmp[y * out_w + ox] = row.iter().zip(wr).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for oy in 0..out_h {
        let wc = &ry[oy * h..(oy + 1) * h];
        for (y, &c) in wc.iter().enumerate() {
            if c != 0.0 {
                let src = &tmp[y * out_w..(y + 1) * out_w];
                for (o, s) in out[oy * out_w..(oy + 1) * out_w].iter_mut().zip(src) {
                    *o += c * s;
                }
            }
        }
    }
    ImageBuffer::from_clamped(out_h, out_w, out, img.range)
}

/// `f` of the degradation model: bicubic downscale by an integer factor.
pub fn degrade(hr: &ImageBuffer, scale: usize) -> Result<ImageBuffer> {
    if scale == 0 || hr.height % scale != 0 || hr.width % scale != 0 {
        return Err(Error::Contract(format!(
            "{}x{} image is not divisible by scale {scale}",
            hr.height, hr.width
        )));
    }
    bicubic_resize(hr, hr.height / scale, hr.width / scale)
}
