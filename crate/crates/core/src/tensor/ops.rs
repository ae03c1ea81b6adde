//! Elementwise arithmetic, activations, reductions and softmax.
//!
//! Binary operations broadcast with trailing-dimension alignment: shapes are
//! compared from the last axis backwards, each pair of sizes must be equal or
//! one of them 1, and a lower-rank operand is treated as having leading 1s.

use std::sync::Arc;

use super::{numel, probe_active, probe_branches, Element, Tensor};
use crate::error::{Error, Result};

/// Offsets into one operand for every output element of a broadcast.
fn broadcast_map(src: &[usize], out: &[usize]) -> Vec<usize> {
    let r = out.len();
    let lead = r - src.len();
    let mut src_strides = vec![0usize; src.len()];
    let mut acc = 1;
    for d in (0..src.len()).rev() {
        src_strides[d] = acc;
        acc *= src[d];
    }
    let strides: Vec<usize> = (0..r)
        .map(|d| {
            if d < lead || src[d - lead] == 1 {
                0
            } else {
                src_strides[d - lead]
            }
        })
        .collect();
    let total = numel(out);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; r];
    let mut off = 0usize;
    for _ in 0..total {
        map.push(off);
        for d in (0..r).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out[d] {
                break;
            }
            off -= strides[d] * out[d];
            idx[d] = 0;
        }
    }
    map
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i < r - a.len() { 1 } else { a[i - (r - a.len())] };
        let db = if i < r - b.len() { 1 } else { b[i - (r - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::Dimension(format!(
                    "cannot broadcast {:?} with {:?}",
                    a, b
                )))
            }
        };
    }
    Ok(out)
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl<T: Element> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, op: BinOp) -> Result<Tensor<T>> {
        let out_shape = broadcast_shape(self.shape(), other.shape())?;
        let n = numel(&out_shape);
        let map_a = (self.shape() != out_shape.as_slice())
            .then(|| Arc::new(broadcast_map(self.shape(), &out_shape)));
        let map_b = (other.shape() != out_shape.as_slice())
            .then(|| Arc::new(broadcast_map(other.shape(), &out_shape)));
        let (a, b) = (self.data(), other.data());
        let ia = |i: usize| map_a.as_ref().map_or(i, |m| m[i]);
        let ib = |i: usize| map_b.as_ref().map_or(i, |m| m[i]);
        let data: Vec<T> = match (map_a.is_none() && map_b.is_none(), op) {
            (true, BinOp::Add) => a.iter().zip(b).map(|(x, y)| *x + *y).collect(),
            (true, BinOp::Sub) => a.iter().zip(b).map(|(x, y)| *x - *y).collect(),
            (true, BinOp::Mul) => a.iter().zip(b).map(|(x, y)| *x * *y).collect(),
            (true, BinOp::Div) => a.iter().zip(b).map(|(x, y)| *x / *y).collect(),
            (false, _) => (0..n)
                .map(|i| {
                    let (x, y) = (a[ia(i)], b[ib(i)]);
                    match op {
                        BinOp::Add => x + y,
                        BinOp::Sub => x - y,
                        BinOp::Mul => x * y,
                        BinOp::Div => x / y,
                    }
                })
                .collect(),
        };
        let tag = match op {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        };
        let (ta, tb) = (self.clone(), other.clone());
        let (need_a, need_b) = (self.requires_grad(), other.requires_grad());
        let backward = move |g: &[T]| {
            let (a, b) = (ta.data(), tb.data());
            let ia = |i: usize| map_a.as_ref().map_or(i, |m| m[i]);
            let ib = |i: usize| map_b.as_ref().map_or(i, |m| m[i]);
            let ga = need_a.then(|| {
                let mut ga = vec![T::zero(); a.len()];
                for (i, gi) in g.iter().enumerate() {
                    let d = match op {
                        BinOp::Add | BinOp::Sub => *gi,
                        BinOp::Mul => *gi * b[ib(i)],
                        BinOp::Div => *gi / b[ib(i)],
                    };
                    ga[ia(i)] += d;
                }
                ga
            });
            let gb = need_b.then(|| {
                let mut gb = vec![T::zero(); b.len()];
                for (i, gi) in g.iter().enumerate() {
                    let d = match op {
                        BinOp::Add => *gi,
                        BinOp::Sub => -*gi,
                        BinOp::Mul => *gi * a[ia(i)],
                        BinOp::Div => {
                            let y = b[ib(i)];
                            -*gi * a[ia(i)] / (y * y)
                        }
                    };
                    gb[ib(i)] += d;
                }
                gb
            });
            vec![ga, gb]
        };
        Ok(Tensor::from_op(
            out_shape,
            Arc::new(data),
            tag,
            vec![self.clone(), other.clone()],
            Box::new(backward),
        ))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinOp::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinOp::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinOp::Mul)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinOp::Div)
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    fn unary(
        &self,
        tag: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + Send + Sync + 'static,
    ) -> Tensor<T> {
        let out = Arc::new(self.data().iter().map(|&x| f(x)).collect::<Vec<T>>());
        let x = self.clone();
        let y = Arc::clone(&out);
        let backward = move |g: &[T]| {
            let gx = x
                .data()
                .iter()
                .zip(y.iter())
                .zip(g)
                .map(|((&xi, &yi), &gi)| gi * df(xi, yi))
                .collect();
            vec![Some(gx)]
        };
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            tag,
            vec![self.clone()],
            Box::new(backward),
        )
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&self) -> Tensor<T> {
        if probe_active() {
            probe_branches(self.data().iter().map(|&x| (x > T::zero()) as u8));
        }
        self.unary(
            "relu",
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        if probe_active() {
            probe_branches(self.data().iter().map(|&x| (x > T::zero()) as u8));
        }
        let s = T::of(slope);
        self.unary(
            "leaky_relu",
            move |x| if x > T::zero() { x } else { s * x },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(
            "sigmoid",
            |x| {
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            },
            |_, y| y * (T::one() - y),
        )
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(&self) -> Result<Tensor<T>> {
        if let Some(bad) = self.data().iter().find(|&&x| !(x > T::zero())) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary("log", |x| x.ln(), |x, _| T::one() / x))
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    /// Elementwise square (`|x|²` for real input).
    pub fn square(&self) -> Tensor<T> {
        self.unary("square", |x| x * x, |x, _| x + x)
    }

    pub fn scale(&self, c: f64) -> Tensor<T> {
        let c = T::of(c);
        self.unary("scale", move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        let c = T::of(c);
        self.unary("add_scalar", move |x| x + c, |_, _| T::one())
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-1.0)
    }

    /// Clamps into `[lo, hi]`; the gradient is passed through inside the
    /// interval (bounds included) and zero outside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor<T> {
        let (l, h) = (T::of(lo), T::of(hi));
        if probe_active() {
            probe_branches(
                self.data()
                    .iter()
                    .map(|&x| (x < l) as u8 | (((x > h) as u8) << 1)),
            );
        }
        self.unary(
            "clamp",
            move |x| x.max(l).min(h),
            move |x, _| {
                if x >= l && x <= h {
                    T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().copied().sum::<T>();
        let n = self.numel();
        let backward = move |g: &[T]| vec![Some(vec![g[0]; n])];
        Tensor::from_op(
            Vec::new(),
            Arc::new(vec![total]),
            "sum",
            vec![self.clone()],
            Box::new(backward),
        )
    }

    /// Mean of all entries, as a rank-0 tensor.
    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel();
        let inv = T::one() / T::of(n as f64);
        let total = self.data().iter().copied().sum::<T>() * inv;
        let backward = move |g: &[T]| vec![Some(vec![g[0] * inv; n])];
        Tensor::from_op(
            Vec::new(),
            Arc::new(vec![total]),
            "mean",
            vec![self.clone()],
            Box::new(backward),
        )
    }

    /// Numerically stable softmax along `axis` (max-subtracted).
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::Dimension(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let x = self.data();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut m = T::neg_infinity();
                for k in 0..len {
                    m = m.max(x[base + k * inner]);
                }
                let mut s = T::zero();
                for k in 0..len {
                    let e = (x[base + k * inner] - m).exp();
                    y[base + k * inner] = e;
                    s += e;
                }
                let inv = T::one() / s;
                for k in 0..len {
                    y[base + k * inner] *= inv;
                }
            }
        }
        let y = Arc::new(y);
        let yb = Arc::clone(&y);
        let backward = move |g: &[T]| {
            let mut gx = vec![T::zero(); g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut dot = T::zero();
                    for k in 0..len {
                        let p = base + k * inner;
                        dot += g[p] * yb[p];
                    }
                    for k in 0..len {
                        let p = base + k * inner;
                        gx[p] = yb[p] * (g[p] - dot);
                    }
                }
            }
            vec![Some(gx)]
        };
        Ok(Tensor::from_op(
            shape.to_vec(),
            y,
            "softmax",
            vec![self.clone()],
            Box::new(backward),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, v).unwrap()
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let x = t(&[2], vec![-1.0, 2.0]);
        assert_eq!(x.relu().to_vec(), vec![0.0, 2.0]);
        assert_eq!(t(&[1], vec![0.0]).sigmoid().item(), 0.5);
        let l = x.leaky_relu(0.2).to_vec();
        assert!((l[0] + 0.2).abs() < 1e-15 && l[1] == 2.0);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let x = Tensor::<f64>::parameter(&[1], vec![0.0]).unwrap();
        x.relu().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0]);
    }

    #[test]
    fn log_rejects_non_positive() {
        assert!(matches!(t(&[2], vec![1.0, 0.0]).log(), Err(Error::Domain(_))));
        assert!(matches!(t(&[1], vec![-3.0]).log(), Err(Error::Domain(_))));
    }

    #[test]
    fn broadcast_bias_pattern() {
        let x = t(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(&[3], vec![10.0, 20.0, 30.0]);
        assert_eq!(
            x.add(&b).unwrap().to_vec(),
            vec![11.0, 22.0, 33.0, 14.0, 25.0, 36.0]
        );
        let c = t(&[2, 1], vec![2.0, 3.0]);
        assert_eq!(
            x.mul(&c).unwrap().to_vec(),
            vec![2.0, 4.0, 6.0, 12.0, 15.0, 18.0]
        );
        assert!(x.add(&t(&[2], vec![0.0, 0.0])).is_err());
    }

    #[test]
    fn broadcast_gradient_reduces() {
        let x = Tensor::<f64>::parameter(&[2, 3], vec![1.0; 6]).unwrap();
        let b = Tensor::<f64>::parameter(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        x.mul(&b).unwrap().sum().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0, 2.0]);
        assert_eq!(x.grad().unwrap(), vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn softmax_examples() {
        let s = t(&[2], vec![0.0, 0.0]).softmax(0).unwrap().to_vec();
        assert_eq!(s, vec![0.5, 0.5]);
        let s = t(&[2], vec![1e4, 1e4]).softmax(0).unwrap().to_vec();
        assert_eq!(s, vec![0.5, 0.5]);
        let s32 = Tensor::<f32>::new(&[2], vec![1e4, 1e4]).unwrap().softmax(0).unwrap();
        assert_eq!(s32.to_vec(), vec![0.5, 0.5]);
        assert!(t(&[2], vec![0.0, 0.0]).softmax(1).is_err());
    }

    #[test]
    fn softmax_middle_axis_sums_to_one() {
        let v: Vec<f64> = (0..24).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let s = t(&[2, 3, 4], v).softmax(1).unwrap();
        let d = s.data();
        for o in 0..2 {
            for i in 0..4 {
                let total: f64 = (0..3).map(|k| d[o * 12 + k * 4 + i]).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mean_and_sum() {
        let x = t(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(x.sum().item(), 10.0);
        assert_eq!(x.mean().item(), 2.5);
        assert_eq!(x.sum().rank(), 0);
    }

    #[test]
    fn clamp_blocks_gradient_outside() {
        let x = Tensor::<f64>::parameter(&[3], vec![-1.0, 0.5, 2.0]).unwrap();
        let y = x.clamp(0.0, 1.0);
        assert_eq!(y.to_vec(), vec![0.0, 0.5, 1.0]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0]);
    }
}
