//! Layout-changing operations: reshape, concat, narrow, pixel shuffle,
//! pooling and separable resampling.

use std::sync::Arc;

use super::{gemm, numel, Element, Tensor};
use crate::error::{Error, Result};

impl<T: Element> Tensor<T> {
    /// Same values under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(),
                shape
            )));
        }
        let backward = |g: &[T]| vec![Some(g.to_vec())];
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.data_arc(),
            "reshape",
            vec![self.clone()],
            Box::new(backward),
        ))
    }
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

/// Joins tensors along `axis`; all other extents must agree.
pub fn concat<T: Element>(tensors: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = tensors
        .first()
        .ok_or_else(|| Error::Contract("concat of an empty list".into()))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(Error::Dimension(format!(
            "concat axis {axis} out of range for rank {rank}"
        )));
    }
    for t in tensors {
        let ok = t.rank() == rank
            && (0..rank).all(|d| d == axis || t.shape()[d] == first.shape()[d]);
        if !ok {
            return Err(Error::Dimension(format!(
                "concat on axis {axis}: {:?} incompatible with {:?}",
                t.shape(),
                first.shape()
            )));
        }
    }
    let (outer, _, inner) = split_at_axis(first.shape(), axis);
    let lens: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
    let total: usize = lens.iter().sum();
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    let mut out = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for (t, &len) in tensors.iter().zip(&lens) {
            out.extend_from_slice(&t.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    let needs: Vec<bool> = tensors.iter().map(|t| t.requires_grad()).collect();
    let backward = move |g: &[T]| {
        let mut grads: Vec<Option<Vec<T>>> = needs
            .iter()
            .zip(&lens)
            .map(|(&need, &len)| need.then(|| Vec::with_capacity(outer * len * inner)))
            .collect();
        let mut off = 0;
        for _ in 0..outer {
            for (gr, &len) in grads.iter_mut().zip(&lens) {
                let span = len * inner;
                if let Some(gr) = gr {
                    gr.extend_from_slice(&g[off..off + span]);
                }
                off += span;
            }
        }
        grads
    };
    Ok(Tensor::from_op(
        shape,
        Arc::new(out),
        "concat",
        tensors.to_vec(),
        Box::new(backward),
    ))
}

/// The slice `[start, start + len)` of `x` along `axis`.
pub fn narrow<T: Element>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() || start + len > x.shape()[axis] {
        return Err(Error::Dimension(format!(
            "narrow({axis}, {start}, {len}) out of range for {:?}",
            x.shape()
        )));
    }
    let (outer, full, inner) = split_at_axis(x.shape(), axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let n_in = x.numel();
    let backward = move |g: &[T]| {
        let mut gx = vec![T::zero(); n_in];
        for o in 0..outer {
            let base = (o * full + start) * inner;
            gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
        }
        vec![Some(gx)]
    };
    Ok(Tensor::from_op(
        shape,
        Arc::new(out),
        "narrow",
        vec![x.clone()],
        Box::new(backward),
    ))
}

/// Index of `out[n, c, y*r + i, x*r + j]` in the `[N, C·r², H, W]` source.
fn shuffle_perm(n: usize, c: usize, h: usize, w: usize, r: usize) -> Vec<usize> {
    let (ho, wo) = (h * r, w * r);
    let mut perm = Vec::with_capacity(n * c * ho * wo);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let (y, i) = (oy / r, oy % r);
                    let (x, j) = (ox / r, ox % r);
                    let src_c = ch * r * r + i * r + j;
                    perm.push(((b * c * r * r + src_c) * h + y) * w + x);
                }
            }
        }
    }
    perm
}

fn gather<T: Element>(x: &Tensor<T>, shape: Vec<usize>, perm: Vec<usize>, tag: &'static str) -> Tensor<T> {
    let out: Vec<T> = perm.iter().map(|&p| x.data()[p]).collect();
    let n_in = x.numel();
    let backward = move |g: &[T]| {
        let mut gx = vec![T::zero(); n_in];
        for (gi, &p) in g.iter().zip(&perm) {
            gx[p] += *gi;
        }
        vec![Some(gx)]
    };
    Tensor::from_op(shape, Arc::new(out), tag, vec![x.clone()], Box::new(backward))
}

/// Sub-pixel rearrangement `[N, C·r², H, W] -> [N, C, rH, rW]`.
pub fn pixel_shuffle<T: Element>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 || r == 0 || s[1] % (r * r) != 0 {
        return Err(Error::Dimension(format!(
            "pixel_shuffle(r={r}) needs [N, C·r², H, W], got {s:?}"
        )));
    }
    let (n, c, h, w) = (s[0], s[1] / (r * r), s[2], s[3]);
    let perm = shuffle_perm(n, c, h, w, r);
    Ok(gather(x, vec![n, c, h * r, w * r], perm, "pixel_shuffle"))
}

/// Inverse of [`pixel_shuffle`]: `[N, C, rH, rW] -> [N, C·r², H, W]`.
pub fn pixel_unshuffle<T: Element>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 || r == 0 || s[2] % r != 0 || s[3] % r != 0 {
        return Err(Error::Dimension(format!(
            "pixel_unshuffle(r={r}) needs [N, C, rH, rW], got {s:?}"
        )));
    }
    let (n, c, h, w) = (s[0], s[1], s[2] / r, s[3] / r);
    let forward = shuffle_perm(n, c, h, w, r);
    let mut perm = vec![0; forward.len()];
    for (dst, &src) in forward.iter().enumerate() {
        perm[src] = dst;
    }
    Ok(gather(x, vec![n, c * r * r, h, w], perm, "pixel_unshuffle"))
}

/// Spatial mean per channel: `[N,C,H,W] -> [N,C]`.
pub fn global_avg_pool<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 || s[2] == 0 || s[3] == 0 {
        return Err(Error::Dimension(format!(
            "global_avg_pool needs [N,C,H,W] with H,W >= 1, got {s:?}"
        )));
    }
    let (nc, hw) = (s[0] * s[1], s[2] * s[3]);
    let inv = T::one() / T::of(hw as f64);
    let out: Vec<T> = x
        .data()
        .chunks_exact(hw)
        .map(|plane| plane.iter().copied().sum::<T>() * inv)
        .collect();
    let backward = move |g: &[T]| {
        let mut gx = Vec::with_capacity(nc * hw);
        for &gi in g {
            gx.extend(std::iter::repeat_n(gi * inv, hw));
        }
        vec![Some(gx)]
    };
    Ok(Tensor::from_op(
        vec![s[0], s[1]],
        Arc::new(out),
        "global_avg_pool",
        vec![x.clone()],
        Box::new(backward),
    ))
}

/// Applies the fixed linear map `Y = Ry · X · Rxᵀ` to every `[H,W]` plane of
/// `x [N,C,H,W]`, with `ry [Ho,H]` and `rx [Wo,W]` row-major. Separable
/// interpolation (e.g. bicubic) is expressed this way.
pub fn resample_separable<T: Element>(
    x: &Tensor<T>,
    ry: &[T],
    rx: &[T],
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 || ry.len() != out_h * s[2] || rx.len() != out_w * s[3] {
        return Err(Error::Dimension(format!(
            "resample_separable: input {s:?} vs maps {}x{}",
            out_h, out_w
        )));
    }
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let ry = Arc::new(ry.to_vec());
    let rx = Arc::new(rx.to_vec());
    let mut out = vec![T::zero(); planes * out_h * out_w];
    let mut tmp = vec![T::zero(); h * out_w];
    for p in 0..planes {
        let xp = &x.data()[p * h * w..(p + 1) * h * w];
        gemm(false, true, h, out_w, w, xp, &rx, T::zero(), &mut tmp);
        gemm(
            false,
            false,
            out_h,
            out_w,
            h,
            &ry,
            &tmp,
            T::zero(),
            &mut out[p * out_h * out_w..(p + 1) * out_h * out_w],
        );
    }
    let backward = move |g: &[T]| {
        let mut gx = vec![T::zero(); planes * h * w];
        let mut tmp = vec![T::zero(); h * out_w];
        for p in 0..planes {
            let gp = &g[p * out_h * out_w..(p + 1) * out_h * out_w];
            gemm(true, false, h, out_w, out_h, &ry, gp, T::zero(), &mut tmp);
            gemm(
                false,
                false,
                h,
                w,
                out_w,
                &tmp,
                &rx,
                T::zero(),
                &mut gx[p * h * w..(p + 1) * h * w],
            );
        }
        vec![Some(gx)]
    };
    Ok(Tensor::from_op(
        vec![s[0], s[1], out_h, out_w],
        Arc::new(out),
        "resample",
        vec![x.clone()],
        Box::new(backward),
    ))
}
