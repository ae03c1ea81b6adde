use std::fmt;
use std::str::FromStr;

use super::attention::{ChannelAttention, SelfAttention};
use super::fusion::{fuse, FusionConfig};
use super::lffb::{Lffb, PlainBlock};
use super::{join, Conv2d, Init, Module};
use crate::data::{bicubic, check_scale};
use crate::error::{Error, Result};
use crate::tensor::{pixel_shuffle, resample_separable, Element, Tensor};

/// Modules switched off for an ablation run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Ablation {
    pub no_sa: bool,
    pub no_ca: bool,
    pub no_lffb: bool,
}

impl Ablation {
    pub const NONE: Ablation = Ablation {
        no_sa: false,
        no_ca: false,
        no_lffb: false,
    };

    /// The seven-row ablation grid, full model first.
    pub const GRID: [Ablation; 7] = [
        Ablation::NONE,
        Ablation { no_sa: true, no_ca: false, no_lffb: false },
        Ablation { no_sa: false, no_ca: true, no_lffb: false },
        Ablation { no_sa: false, no_ca: false, no_lffb: true },
        Ablation { no_sa: true, no_ca: true, no_lffb: false },
        Ablation { no_sa: true, no_ca: false, no_lffb: true },
        Ablation { no_sa: false, no_ca: true, no_lffb: true },
    ];

    /// Grid row label: `FA-GAN`, `-SA`, `-SA-CA`, ...
    pub fn label(&self) -> String {
        let mut s = String::new();
        for (off, name) in [(self.no_sa, "SA"), (self.no_ca, "CA"), (self.no_lffb, "LFFB")] {
            if off {
                s.push('-');
                s.push_str(name);
            }
        }
        if s.is_empty() {
            "FA-GAN".into()
        } else {
            s
        }
    }
}

/// Comma-separated disabled modules, `none` when empty.
impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [(self.no_sa, "SA"), (self.no_ca, "CA"), (self.no_lffb, "LFFB")]
            .iter()
            .filter(|(off, _)| *off)
            .map(|(_, n)| *n)
            .collect();
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut a = Ablation::NONE;
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("none") {
            return Ok(a);
        }
        for part in s.split(',') {
            match part.trim().to_ascii_uppercase().as_str() {
                "SA" => a.no_sa = true,
                "CA" => a.no_ca = true,
                "LFFB" => a.no_lffb = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown ablation module {other:?} (expected SA, CA, LFFB)"
                    )))
                }
            }
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub scale: usize,
    pub width: usize,
    pub lffb_blocks: usize,
    pub ca_reduction: usize,
    pub ablation: Ablation,
    pub fusion: FusionConfig,
    /// Add the bicubic upscale of the input to the output, so the network
    /// learns a residual.
    pub global_skip: bool,
    /// Start the tail convolution at zero (the untrained generator then
    /// reproduces the skip path exactly).
    pub zero_tail: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            scale: 2,
            width: 32,
            lffb_blocks: 4,
            ca_reduction: 4,
            ablation: Ablation::NONE,
            fusion: FusionConfig::default(),
            global_skip: true,
            zero_tail: true,
        }
    }
}

#[derive(Clone)]
pub enum Trunk<T: Element> {
    Lffb(Vec<Lffb<T>>),
    Plain(Vec<PlainBlock<T>>),
}

/// Head conv, LFFB chain, body conv, `log2(scale)` pixel-shuffle stages,
/// global feature fusion (channel attention and self-attention, fused),
/// tail conv.
#[derive(Clone)]
pub struct Generator<T: Element> {
    pub config: GeneratorConfig,
    pub head: Conv2d<T>,
    pub trunk: Trunk<T>,
    pub body: Conv2d<T>,
    pub up: Vec<Conv2d<T>>,
    pub ca: Option<ChannelAttention<T>>,
    pub sa: Option<SelfAttention<T>>,
    pub tail: Conv2d<T>,
}

impl<T: Element> Generator<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        check_scale(config.scale)?;
        let c = config.width;
        if c == 0 {
            return Err(Error::Config("generator width must be positive".into()));
        }
        let mut init = Init::new(seed);
        let head = Conv2d::new(&mut init, 1, c, 3, 1);
        let trunk = if config.ablation.no_lffb {
            Trunk::Plain((0..config.lffb_blocks).map(|_| PlainBlock::new(&mut init, c)).collect())
        } else {
            Trunk::Lffb((0..config.lffb_blocks).map(|_| Lffb::new(&mut init, c)).collect())
        };
        let body = Conv2d::new(&mut init, c, c, 3, 1);
        let stages = config.scale.trailing_zeros() as usize;
        let up = (0..stages).map(|_| Conv2d::new(&mut init, c, 4 * c, 3, 1)).collect();
        let ca = if config.ablation.no_ca {
            None
        } else {
            Some(ChannelAttention::new(&mut init, c, config.ca_reduction)?)
        };
        let sa = if config.ablation.no_sa {
            None
        } else {
            Some(SelfAttention::new(&mut init, c)?)
        };
        let tail = if config.zero_tail {
            Conv2d::zeroed(c, 1, 3)
        } else {
            Conv2d::new(&mut init, c, 1, 3, 1)
        };
        Ok(Generator {
            config,
            head,
            trunk,
            body,
            up,
            ca,
            sa,
            tail,
        })
    }

    pub fn upsampling_stages(&self) -> usize {
        self.up.len()
    }

    /// `lr [N,1,h,w]` in `[0,1]` units to `[N,1,scale·h,scale·w]`.
    pub fn forward(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        let s = lr.shape();
        if s.len() != 4 || s[1] != 1 {
            return Err(Error::Dimension(format!("generator expects [N,1,h,w], got {s:?}")));
        }
        let x = self.gffb(&self.features(lr)?)?;
        let out = self.tail.forward(&x)?;
        if !self.config.global_skip {
            return Ok(out);
        }
        let (oh, ow) = (s[2] * self.config.scale, s[3] * self.config.scale);
        let ry: Vec<T> = bicubic::weights(s[2], oh).into_iter().map(T::of).collect();
        let rx: Vec<T> = bicubic::weights(s[3], ow).into_iter().map(T::of).collect();
        out.add(&resample_separable(lr, &ry, &rx, oh, ow)?)
    }

    /// Everything before the global feature fusion block.
    fn features(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = self.head.forward(lr)?;
        match &self.trunk {
            Trunk::Lffb(blocks) => {
                for b in blocks {
                    x = b.forward(&x)?;
                }
            }
            Trunk::Plain(blocks) => {
                for b in blocks {
                    x = b.forward(&x)?;
                }
            }
        }
        x = self.body.forward(&x)?;
        for conv in &self.up {
            x = pixel_shuffle(&conv.forward(&x)?, 2)?.relu();
        }
        Ok(x)
    }

    fn gffb(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match (&self.ca, &self.sa) {
            (Some(ca), Some(sa)) => fuse(&ca.forward(x)?, &sa.forward(x)?, &self.config.fusion),
            (Some(ca), None) => ca.forward(x),
            (None, Some(sa)) => sa.forward(x),
            (None, None) => Ok(x.clone()),
        }
    }
}

impl<T: Element> Module<T> for Generator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.head.visit(&join(prefix, "head"), f);
        match &self.trunk {
            Trunk::Lffb(blocks) => {
                for (i, b) in blocks.iter().enumerate() {
                    b.visit(&join(prefix, &format!("lffb.{i}")), f);
                }
            }
            Trunk::Plain(blocks) => {
                for (i, b) in blocks.iter().enumerate() {
                    b.visit(&join(prefix, &format!("plain.{i}")), f);
                }
            }
        }
        self.body.visit(&join(prefix, "body"), f);
        for (i, c) in self.up.iter().enumerate() {
            c.visit(&join(prefix, &format!("up.{i}")), f);
        }
        if let Some(ca) = &self.ca {
            ca.visit(&join(prefix, "gffb.ca"), f);
        }
        if let Some(sa) = &self.sa {
            sa.visit(&join(prefix, "gffb.sa"), f);
        }
        self.tail.visit(&join(prefix, "tail"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.head.visit_mut(&join(prefix, "head"), f);
        match &mut self.trunk {
            Trunk::Lffb(blocks) => {
                for (i, b) in blocks.iter_mut().enumerate() {
                    b.visit_mut(&join(prefix, &format!("lffb.{i}")), f);
                }
            }
            Trunk::Plain(blocks) => {
                for (i, b) in blocks.iter_mut().enumerate() {
                    b.visit_mut(&join(prefix, &format!("plain.{i}")), f);
                }
            }
        }
        self.body.visit_mut(&join(prefix, "body"), f);
        for (i, c) in self.up.iter_mut().enumerate() {
            c.visit_mut(&join(prefix, &format!("up.{i}")), f);
        }
        if let Some(ca) = &mut self.ca {
            ca.visit_mut(&join(prefix, "gffb.ca"), f);
        }
        if let Some(sa) = &mut self.sa {
            sa.visit_mut(&join(prefix, "gffb.sa"), f);
        }
        self.tail.visit_mut(&join(prefix, "tail"), f);
    }
}
