//! Generator and discriminator objectives.
//!
//! The perceptual distance uses a small frozen convolutional stack in place
//! of a pretrained classification network; the identity extractor gives
//! plain pixel MSE.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Init};
use crate::tensor::{Element, Tensor};

/// Weight of the adversarial term in the combined generator loss.
pub const ADVERSARIAL_WEIGHT: f64 = 1e-3;
/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;
/// Channel widths of the frozen extractor layers.
pub const EXTRACTOR_CHANNELS: [usize; 3] = [16, 16, 32];

/// Frozen feature map `φ`. No parameter ever requires a gradient.
#[derive(Clone)]
pub struct FeatureExtractor<T: Element> {
    layers: Vec<Conv2d<T>>,
    seed: Option<u64>,
}

impl<T: Element> FeatureExtractor<T> {
    /// `φ(x) = x`.
    pub fn identity() -> Self {
        FeatureExtractor {
            layers: Vec::new(),
            seed: None,
        }
    }

    /// Seeded conv stack `1 → 16 → 16 → 32`, 3x3 kernels, stride 2, ReLU
    /// after each layer; `depth` (1..=3) selects how many layers to keep.
    pub fn frozen_conv(seed: u64, depth: usize) -> Result<Self> {
        if !(1..=EXTRACTOR_CHANNELS.len()).contains(&depth) {
            return Err(Error::Config(format!("extractor depth must be 1..=3, got {depth}")));
        }
        let mut init = Init::new(seed);
        let mut c_in = 1;
        let mut layers = Vec::new();
        for &c_out in &EXTRACTOR_CHANNELS[..depth] {
            let mut conv = Conv2d::new(&mut init, c_in, c_out, 3, 2);
            conv.weight = conv.weight.detach();
            conv.bias = conv.bias.detach();
            layers.push(conv);
            c_in = c_out;
        }
        Ok(FeatureExtractor {
            layers,
            seed: Some(seed),
        })
    }

    pub fn is_identity(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Channel count of the output features.
    pub fn feature_channels(&self) -> usize {
        self.layers.last().map_or(1, |c| c.out_channels())
    }

    pub fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for conv in &self.layers {
            h = conv.forward(&h)?.relu();
        }
        Ok(h)
    }
}

/// Mean over batch, channels and positions of `(φ(sr) - φ(hr))²`.
pub fn content_loss<T: Element>(sr: &Tensor<T>, hr: &Tensor<T>, fx: &FeatureExtractor<T>) -> Result<Tensor<T>> {
    if sr.shape() != hr.shape() {
        return Err(Error::Dimension(format!(
            "content loss operands differ: {:?} vs {:?}",
            sr.shape(),
            hr.shape()
        )));
    }
    let diff = fx.features(sr)?.sub(&fx.features(&hr.detach())?)?;
    Ok(diff.square().mean())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reduction::Sum => "sum",
            Reduction::Mean => "mean",
        })
    }
}

impl FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            _ => Err(Error::Config(format!("unknown reduction {s:?} (expected sum or mean)"))),
        }
    }
}

fn checked_probs<T: Element>(p: &Tensor<T>, what: &str) -> Result<Tensor<T>> {
    if let Some(v) = p.data().iter().map(|v| v.as_f64()).find(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Contract(format!("{what} holds {v}, not a probability")));
    }
    Ok(p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
}

/// `-log D(G(lr))` reduced over the batch.
pub fn adversarial_loss_g<T: Element>(d_fake: &Tensor<T>, reduction: Reduction) -> Result<Tensor<T>> {
    let nll = checked_probs(d_fake, "d_fake")?.log()?.neg();
    Ok(match reduction {
        Reduction::Sum => nll.sum(),
        Reduction::Mean => nll.mean(),
    })
}

/// `-mean(log d_real) - mean(log(1 - d_fake))`.
pub fn discriminator_loss<T: Element>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<Tensor<T>> {
    let real = checked_probs(d_real, "d_real")?.log()?.mean();
    let fake = checked_probs(d_fake, "d_fake")?.neg().add_scalar(1.0).log()?.mean();
    Ok(real.add(&fake)?.neg())
}

/// `content + 1e-3 · adversarial`.
pub fn combined_loss_g<T: Element>(content: &Tensor<T>, adversarial: &Tensor<T>) -> Result<Tensor<T>> {
    content.add(&adversarial.scale(ADVERSARIAL_WEIGHT))
}

pub fn combined_value(content: f64, adversarial: f64) -> f64 {
    content + ADVERSARIAL_WEIGHT * adversarial
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub content: f64,
    pub adversarial: f64,
    pub combined: f64,
    pub d_loss: f64,
}

impl LossReport {
    pub fn new(content: f64, adversarial: f64, d_loss: f64) -> Self {
        LossReport {
            content,
            adversarial,
            combined: combined_value(content, adversarial),
            d_loss,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.content, self.adversarial, self.combined, self.d_loss]
            .iter()
            .all(|v| v.is_finite())
    }
}
