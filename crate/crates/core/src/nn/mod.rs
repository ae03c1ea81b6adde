//! Network building blocks: local fusion feature block, channel and
//! self-attention, fusion operators, spectral normalization, and the
//! generator / discriminator assembled from them.

pub mod attention;
pub mod discriminator;
pub mod fusion;
pub mod generator;
pub mod lffb;
pub mod spectral;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{conv2d, fully_connected, Element, Tensor};

pub use attention::{ChannelAttention, SelfAttention};
pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use fusion::{fuse, FusionConfig, FusionMode};
pub use generator::{Ablation, Generator, GeneratorConfig};
pub use lffb::Lffb;
pub use spectral::{spectral_normalize, SpectralNormState};

/// Anything owning named parameter tensors.
///
/// Names are dotted paths such as `generator.lffb.0.branch3.conv1.weight`;
/// `prefix` is prepended by the caller.
pub trait Module<T: Element> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>));

    /// Lets `f` replace parameters in place (the optimizer swaps in fresh leaves).
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>));

    fn named_parameters(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }

    fn zero_grad(&self) {
        self.visit("", &mut |_, t| t.zero_grad());
    }
}

impl<T: Element> Module<T> for () {
    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Tensor<T>)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Tensor<T>)) {}
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Assigns stored tensors into a module by name. Every parameter must be
/// present with a matching shape.
pub fn load_parameters<T: Element, M: Module<T>>(
    module: &mut M,
    prefix: &str,
    lookup: &dyn Fn(&str) -> Option<Tensor<T>>,
) -> Result<()> {
    let mut err = None;
    module.visit_mut(prefix, &mut |name, slot| {
        if err.is_some() {
            return;
        }
        match lookup(name) {
            Some(t) if t.shape() == slot.shape() => *slot = t.with_requires_grad(true),
            Some(t) => {
                err = Some(Error::Dimension(format!(
                    "parameter {name}: stored shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )))
            }
            None => err = Some(Error::Contract(format!("missing parameter {name}"))),
        }
    });
    err.map_or(Ok(()), Err)
}

/// Seeded parameter initializer: fan-in scaled uniform `U(-1/√fan_in, 1/√fan_in)`.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform<T: Element>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::of(self.rng.random_range(-bound..bound)))
            .collect();
        Tensor::parameter(shape, data).expect("shape matches")
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[derive(Clone)]
pub struct Conv2d<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Element> Conv2d<T> {
    /// Square-kernel conv; padding `(kernel-1)/2` keeps size at stride 1.
    pub fn new(init: &mut Init, c_in: usize, c_out: usize, kernel: usize, stride: usize) -> Self {
        let fan_in = c_in * kernel * kernel;
        Conv2d {
            weight: init.uniform(&[c_out, c_in, kernel, kernel], fan_in),
            bias: init.uniform(&[c_out], fan_in),
            stride,
            padding: (kernel - 1) / 2,
        }
    }

    /// All-zero weight and bias.
    pub fn zeroed(c_in: usize, c_out: usize, kernel: usize) -> Self {
        let w = Tensor::parameter(
            &[c_out, c_in, kernel, kernel],
            vec![T::zero(); c_out * c_in * kernel * kernel],
        )
        .expect("shape");
        Conv2d {
            weight: w,
            bias: Tensor::parameter(&[c_out], vec![T::zero(); c_out]).expect("shape"),
            stride: 1,
            padding: (kernel - 1) / 2,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.weight, Some(&self.bias), self.stride, self.padding)
    }

    /// Forward with a substitute weight (spectral normalization).
    pub fn forward_with(&self, x: &Tensor<T>, weight: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, weight, Some(&self.bias), self.stride, self.padding)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl<T: Element> Module<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Fully connected layer, weight stored `[in, out]`.
#[derive(Clone)]
pub struct Linear<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> Linear<T> {
    pub fn new(init: &mut Init, d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: init.uniform(&[d_in, d_out], d_in),
            bias: init.uniform(&[d_out], d_in),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        fully_connected(x, &self.weight, &self.bias)
    }

    pub fn forward_with(&self, x: &Tensor<T>, weight: &Tensor<T>) -> Result<Tensor<T>> {
        fully_connected(x, weight, &self.bias)
    }
}

impl<T: Element> Module<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
