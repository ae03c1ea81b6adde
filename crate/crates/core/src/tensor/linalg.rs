use std::sync::Arc;

use super::{gemm, Element, Tensor};
use crate::error::{Error, Result};

/// Matrix product of rank-2 tensors, or a batched product of rank-3 tensors
/// `[B,M,K] x [B,K,N]`.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    matmul_t(a, b, false, false)
}

/// `op(a) x op(b)` where `op` transposes the last two axes when its flag is set.
pub fn matmul_t<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    transpose_a: bool,
    transpose_b: bool,
) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != sb.len() || !(sa.len() == 2 || sa.len() == 3) {
        return Err(Error::Dimension(format!(
            "matmul needs two rank-2 or two rank-3 operands, got {sa:?} and {sb:?}"
        )));
    }
    let batched = sa.len() == 3;
    let batch = if batched { sa[0] } else { 1 };
    if batched && sb[0] != batch {
        return Err(Error::Dimension(format!(
            "matmul batch sizes differ: {sa:?} vs {sb:?}"
        )));
    }
    let (ra, ca) = (sa[sa.len() - 2], sa[sa.len() - 1]);
    let (rb, cb) = (sb[sb.len() - 2], sb[sb.len() - 1]);
    let (m, k) = if transpose_a { (ca, ra) } else { (ra, ca) };
    let (k2, n) = if transpose_b { (cb, rb) } else { (rb, cb) };
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions differ: {sa:?}{} x {sb:?}{}",
            if transpose_a { "ᵀ" } else { "" },
            if transpose_b { "ᵀ" } else { "" }
        )));
    }
    let (ta, tb) = (transpose_a, transpose_b);
    let (pa, pb, pc) = (m * k, k * n, m * n);
    let mut out = vec![T::zero(); batch * pc];
    for i in 0..batch {
        gemm(
            ta,
            tb,
            m,
            n,
            k,
            &a.data()[i * pa..(i + 1) * pa],
            &b.data()[i * pb..(i + 1) * pb],
            T::zero(),
            &mut out[i * pc..(i + 1) * pc],
        );
    }
    let out_shape = if batched { vec![batch, m, n] } else { vec![m, n] };
    let (at, bt) = (a.clone(), b.clone());
    let (need_a, need_b) = (a.requires_grad(), b.requires_grad());
    let backward = move |g: &[T]| {
        let (ad, bd) = (at.data(), bt.data());
        let ga = need_a.then(|| {
            let mut ga = vec![T::zero(); ad.len()];
            for i in 0..batch {
                let gi = &g[i * pc..(i + 1) * pc];
                let bi = &bd[i * pb..(i + 1) * pb];
                let dst = &mut ga[i * pa..(i + 1) * pa];
                if ta {
                    // a stored [k,m]: dA = op(B) · dCᵀ
                    gemm(tb, true, k, m, n, bi, gi, T::zero(), dst);
                } else {
                    gemm(false, !tb, m, k, n, gi, bi, T::zero(), dst);
                }
            }
            ga
        });
        let gb = need_b.then(|| {
            let mut gb = vec![T::zero(); bd.len()];
            for i in 0..batch {
                let gi = &g[i * pc..(i + 1) * pc];
                let ai = &ad[i * pa..(i + 1) * pa];
                let dst = &mut gb[i * pb..(i + 1) * pb];
                if tb {
                    // b stored [n,k]: dB = dCᵀ · op(A)
                    gemm(true, ta, n, k, m, gi, ai, T::zero(), dst);
                } else {
                    gemm(!ta, false, k, n, m, ai, gi, T::zero(), dst);
                }
            }
            gb
        });
        vec![ga, gb]
    };
    Ok(Tensor::from_op(
        out_shape,
        Arc::new(out),
        "matmul",
        vec![a.clone(), b.clone()],
        Box::new(backward),
    ))
}

/// `x [N,C] · weight [C,D] + bias [D]`.
pub fn fully_connected<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    if bias.rank() != 1 || weight.rank() != 2 || bias.shape()[0] != weight.shape()[1] {
        return Err(Error::Dimension(format!(
            "fully_connected: weight {:?} and bias {:?} do not match",
            weight.shape(),
            bias.shape()
        )));
    }
    matmul(x, weight)?.add(bias)
}
