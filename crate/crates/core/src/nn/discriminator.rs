use super::spectral::{spectral_normalize, spectral_normalize_frozen, SpectralNormState};
use super::{join, Conv2d, Init, Linear, Module};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    /// Square input size; must be divisible by 8.
    pub input_size: usize,
    /// Channels of the first conv; the stack uses `w, w, 2w, 2w, 4w, 4w`.
    pub width: usize,
    pub hidden: usize,
    pub sn_enabled: bool,
    pub sn_power_iterations: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            input_size: 64,
            width: 16,
            hidden: 64,
            sn_enabled: true,
            sn_power_iterations: 1,
        }
    }
}

/// SRGAN-style critic: six 3x3 convs (every second one strided), each
/// followed by leaky ReLU, then FC, leaky ReLU, FC and sigmoid.
#[derive(Clone)]
pub struct Discriminator<T: Element> {
    pub config: DiscriminatorConfig,
    pub convs: Vec<Conv2d<T>>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    /// One state per weight layer (convs, then fc1, fc2) when SN is on.
    pub sn: Vec<SpectralNormState>,
}

impl<T: Element> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        if config.input_size == 0 || config.input_size % 8 != 0 {
            return Err(Error::Config(format!(
                "discriminator input size must be a positive multiple of 8, got {}",
                config.input_size
            )));
        }
        if config.width == 0 || config.hidden == 0 {
            return Err(Error::Config("discriminator width and hidden size must be positive".into()));
        }
        let mut init = Init::new(seed);
        let w = config.width;
        let plan = [(1, w, 1), (w, w, 2), (w, 2 * w, 1), (2 * w, 2 * w, 2), (2 * w, 4 * w, 1), (4 * w, 4 * w, 2)];
        let convs: Vec<Conv2d<T>> = plan
            .iter()
            .map(|&(ci, co, s)| Conv2d::new(&mut init, ci, co, 3, s))
            .collect();
        let side = config.input_size / 8;
        let flat = 4 * w * side * side;
        let fc1 = Linear::new(&mut init, flat, config.hidden);
        let fc2 = Linear::new(&mut init, config.hidden, 1);
        let mut d = Discriminator {
            config,
            convs,
            fc1,
            fc2,
            sn: Vec::new(),
        };
        if d.config.sn_enabled {
            let shapes: Vec<Vec<usize>> = d.weights().iter().map(|t| t.shape().to_vec()).collect();
            d.sn = shapes
                .iter()
                .map(|s| SpectralNormState::new(s, d.config.sn_power_iterations, init.rng()))
                .collect::<Result<_>>()?;
        }
        Ok(d)
    }

    fn weights(&self) -> Vec<&Tensor<T>> {
        self.convs
            .iter()
            .map(|c| &c.weight)
            .chain([&self.fc1.weight, &self.fc2.weight])
            .collect()
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        let n = self.config.input_size;
        if s.len() != 4 || s[1] != 1 || s[2] != n || s[3] != n {
            return Err(Error::Dimension(format!(
                "discriminator expects [N,1,{n},{n}], got {s:?}"
            )));
        }
        Ok(())
    }

    /// Probability `[N, 1]` that each input is real. Runs the configured
    /// power iterations on every SN state first.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let weights = if self.config.sn_enabled {
            let raw: Vec<Tensor<T>> = self.weights().into_iter().cloned().collect();
            raw.iter()
                .zip(self.sn.iter_mut())
                .map(|(w, st)| spectral_normalize(w, st))
                .collect::<Result<Vec<_>>>()?
        } else {
            self.weights().into_iter().cloned().collect()
        };
        self.run(x, &weights)
    }

    /// Forward pass with the SN vectors held fixed.
    pub fn forward_frozen(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let weights = if self.config.sn_enabled {
            self.weights()
                .into_iter()
                .zip(&self.sn)
                .map(|(w, st)| spectral_normalize_frozen(w, st))
                .collect::<Result<Vec<_>>>()?
        } else {
            self.weights().into_iter().cloned().collect()
        };
        self.run(x, &weights)
    }

    /// The weights as used in the forward pass (normalized when SN is on),
    /// detached, in layer order.
    pub fn effective_weights(&self) -> Result<Vec<Tensor<T>>> {
        let ws = self.weights();
        if !self.config.sn_enabled {
            return Ok(ws.into_iter().map(|w| w.detach()).collect());
        }
        ws.into_iter()
            .zip(&self.sn)
            .map(|(w, st)| Ok(spectral_normalize_frozen(&w.detach(), st)?))
            .collect()
    }

    fn run(&self, x: &Tensor<T>, weights: &[Tensor<T>]) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for (conv, w) in self.convs.iter().zip(weights) {
            h = conv.forward_with(&h, w)?.leaky_relu(LEAKY_SLOPE);
        }
        let n = h.shape()[0];
        let flat = h.reshape(&[n, h.numel() / n])?;
        let k = self.convs.len();
        let h = self.fc1.forward_with(&flat, &weights[k])?.leaky_relu(LEAKY_SLOPE);
        Ok(self.fc2.forward_with(&h, &weights[k + 1])?.sigmoid())
    }
}

impl<T: Element> Module<T> for Discriminator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit(&join(prefix, &format!("conv.{i}")), f);
        }
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_mut(&join(prefix, &format!("conv.{i}")), f);
        }
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}
