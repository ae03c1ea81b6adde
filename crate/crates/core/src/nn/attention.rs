use super::{join, Conv2d, Init, Linear, Module};
use crate::error::{Error, Result};
use crate::tensor::{global_avg_pool, matmul_t, Element, Tensor};

/// Squeeze-and-excitation style channel gate:
/// `scale = sigmoid(expand(relu(reduce(GAP(x)))))`, output `x ⊙ scale`.
#[derive(Clone)]
pub struct ChannelAttention<T: Element> {
    pub channels: usize,
    pub reduction: usize,
    pub reduce: Linear<T>,
    pub expand: Linear<T>,
}

impl<T: Element> ChannelAttention<T> {
    pub fn new(init: &mut Init, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 || channels < reduction {
            return Err(Error::Config(format!(
                "channel attention: {channels} channels not divisible by reduction ratio {reduction}"
            )));
        }
        let hidden = channels / reduction;
        Ok(ChannelAttention {
            channels,
            reduction,
            reduce: Linear::new(init, channels, hidden),
            expand: Linear::new(init, hidden, channels),
        })
    }

    /// Per-channel gate values `[N, C]`, each in `(0, 1)`.
    pub fn scales(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() != 4 || x.shape()[1] != self.channels {
            return Err(Error::Dimension(format!(
                "channel attention with {} channels got {:?}",
                self.channels,
                x.shape()
            )));
        }
        let pooled = global_avg_pool(x)?;
        let hidden = self.reduce.forward(&pooled)?.relu();
        Ok(self.expand.forward(&hidden)?.sigmoid())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        let gate = self.scales(x)?.reshape(&[s[0], s[1], 1, 1])?;
        x.mul(&gate)
    }
}

impl<T: Element> Module<T> for ChannelAttention<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.reduce.visit(&join(prefix, "reduce"), f);
        self.expand.visit(&join(prefix, "expand"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.reduce.visit_mut(&join(prefix, "reduce"), f);
        self.expand.visit_mut(&join(prefix, "expand"), f);
    }
}

/// Spatial self-attention with a learned residual gate.
///
/// With `s_ij = f(x_i)ᵀ g(x_j)` and `β_{j,i} = softmax_i(s_ij)`, the output
/// at location `j` is `γ · v(Σ_i β_{j,i} h(x_i)) + x_j`. `f` and `g` project
/// to `C/8` channels, `h` and `v` keep `C`; all four are 1x1 convolutions.
/// `γ` starts at 0, so a fresh block is the identity.
#[derive(Clone)]
pub struct SelfAttention<T: Element> {
    pub channels: usize,
    pub f: Conv2d<T>,
    pub g: Conv2d<T>,
    pub h: Conv2d<T>,
    pub v: Conv2d<T>,
    pub gamma: Tensor<T>,
}

impl<T: Element> SelfAttention<T> {
    pub fn new(init: &mut Init, channels: usize) -> Result<Self> {
        if channels < 8 || channels % 8 != 0 {
            return Err(Error::Config(format!(
                "self-attention needs a channel count divisible by 8, got {channels}"
            )));
        }
        let inner = channels / 8;
        Ok(SelfAttention {
            channels,
            f: Conv2d::new(init, channels, inner, 1, 1),
            g: Conv2d::new(init, channels, inner, 1, 1),
            h: Conv2d::new(init, channels, channels, 1, 1),
            v: Conv2d::new(init, channels, channels, 1, 1),
            gamma: Tensor::parameter(&[1], vec![T::zero()]).expect("shape"),
        })
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.rank() != 4 || x.shape()[1] != self.channels {
            return Err(Error::Dimension(format!(
                "self-attention with {} channels got {:?}",
                self.channels,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Attention map `[N, HW, HW]`; row `j` holds `β_{j,·}` and sums to 1.
    pub fn attention_map(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let s = x.shape();
        let (n, hw) = (s[0], s[2] * s[3]);
        let c8 = self.channels / 8;
        let fx = self.f.forward(x)?.reshape(&[n, c8, hw])?;
        let gx = self.g.forward(x)?.reshape(&[n, c8, hw])?;
        // [j, i] = g(x_j)ᵀ f(x_i) = s_ij
        matmul_t(&gx, &fx, true, false)?.softmax(2)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let attn = self.attention_map(x)?;
        let s = x.shape();
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let hx = self.h.forward(x)?.reshape(&[n, c, hw])?;
        // column j = Σ_i β_{j,i} h(x_i)
        let o = matmul_t(&hx, &attn, false, true)?.reshape(s)?;
        let o = self.v.forward(&o)?;
        o.mul(&self.gamma)?.add(x)
    }
}

impl<T: Element> Module<T> for SelfAttention<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.f.visit(&join(prefix, "f"), f);
        self.g.visit(&join(prefix, "g"), f);
        self.h.visit(&join(prefix, "h"), f);
        self.v.visit(&join(prefix, "v"), f);
        f(&join(prefix, "gamma"), &self.gamma);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.f.visit_mut(&join(prefix, "f"), f);
        self.g.visit_mut(&join(prefix, "g"), f);
        self.h.visit_mut(&join(prefix, "h"), f);
        self.v.visit_mut(&join(prefix, "v"), f);
        f(&join(prefix, "gamma"), &mut self.gamma);
    }
}
