//! 2-D cross-correlation via im2col + GEMM.

use std::sync::Arc;

use super::{gemm, Element, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    /// 1x1, stride 1, no padding: the input plane already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Element>(x: &[T], g: &Geometry, col: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Element>(col: &[T], g: &Geometry, dx: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dx[base + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation (no kernel flip) of `input [N,C,H,W]` with
/// `weight [K,C,kh,kw]`, plus optional `bias [K]`.
///
/// Output spatial size is `(H + 2p - kh) / stride + 1`.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (xs, ws) = (input.shape(), weight.shape());
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::Dimension(format!(
            "conv2d expects input [N,C,H,W] and weight [K,C,kh,kw], got {xs:?} and {ws:?}"
        )));
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (k, wc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if wc != c {
        return Err(Error::Dimension(format!(
            "conv2d: input has {c} channels, weight expects {wc}"
        )));
    }
    if stride == 0 {
        return Err(Error::Contract("conv2d stride must be >= 1".into()));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::Dimension(format!(
            "conv2d: kernel {kh}x{kw} larger than padded input {h}x{w} (pad {padding})"
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [k] {
            return Err(Error::Dimension(format!(
                "conv2d: bias shape {:?}, expected [{k}]",
                b.shape()
            )));
        }
    }
    let geo = Geometry {
        c,
        h,
        w,
        kh,
        kw,
        stride,
        pad: padding,
        ho: (h + 2 * padding - kh) / stride + 1,
        wo: (w + 2 * padding - kw) / stride + 1,
    };
    let (rows, cols) = (geo.col_rows(), geo.col_cols());
    let plane_in = c * h * w;
    let plane_out = k * cols;
    let x = input.data();
    let wd = weight.data();
    let mut out = vec![T::zero(); n * plane_out];
    let mut col = if geo.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * cols]
    };
    for b in 0..n {
        let xb = &x[b * plane_in..(b + 1) * plane_in];
        let colb: &[T] = if geo.is_pointwise() {
            xb
        } else {
            im2col(xb, &geo, &mut col);
            &col
        };
        let ob = &mut out[b * plane_out..(b + 1) * plane_out];
        gemm(false, false, k, cols, rows, wd, colb, T::zero(), ob);
        if let Some(bias) = bias {
            for (kk, &bv) in bias.data().iter().enumerate() {
                for v in &mut ob[kk * cols..(kk + 1) * cols] {
                    *v += bv;
                }
            }
        }
    }

    let (xt, wt) = (input.clone(), weight.clone());
    let need_x = input.requires_grad();
    let need_w = weight.requires_grad();
    let need_b = bias.is_some_and(|b| b.requires_grad());
    let has_bias = bias.is_some();
    let backward = move |g: &[T]| {
        let x = xt.data();
        let wd = wt.data();
        let mut gx = need_x.then(|| vec![T::zero(); x.len()]);
        let mut gw = need_w.then(|| vec![T::zero(); wd.len()]);
        let mut col = vec![T::zero(); if geo.is_pointwise() { 0 } else { rows * cols }];
        let mut dcol = vec![T::zero(); if need_x { rows * cols } else { 0 }];
        for b in 0..n {
            let gb = &g[b * plane_out..(b + 1) * plane_out];
            if let Some(gw) = gw.as_mut() {
                let xb = &x[b * plane_in..(b + 1) * plane_in];
                let colb: &[T] = if geo.is_pointwise() {
                    xb
                } else {
                    im2col(xb, &geo, &mut col);
                    &col
                };
                gemm(false, true, k, rows, cols, gb, colb, T::one(), gw);
            }
            if let Some(gx) = gx.as_mut() {
                let gxb = &mut gx[b * plane_in..(b + 1) * plane_in];
                if geo.is_pointwise() {
                    gemm(true, false, rows, cols, k, wd, gb, T::zero(), gxb);
                } else {
                    gemm(true, false, rows, cols, k, wd, gb, T::zero(), &mut dcol);
                    col2im_add(&dcol, &geo, gxb);
                }
            }
        }
        let gbias = need_b.then(|| {
            let mut gbias = vec![T::zero(); k];
            for b in 0..n {
                for (kk, acc) in gbias.iter_mut().enumerate() {
                    let off = b * plane_out + kk * cols;
                    *acc += g[off..off + cols].iter().copied().sum::<T>();
                }
            }
            gbias
        });
        let mut grads = vec![gx, gw];
        if has_bias {
            grads.push(gbias);
        }
        grads
    };
    let mut parents = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Ok(Tensor::from_op(
        vec![n, k, geo.ho, geo.wo],
        Arc::new(out),
        "conv2d",
        parents,
        Box::new(backward),
    ))
}
