//! `key = value` training configuration.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Every key is optional and unknown or repeated keys are errors.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::data::check_scale;
use crate::error::{Error, Result};
use crate::losses::Reduction;
use crate::nn::{Ablation, DiscriminatorConfig, FusionConfig, FusionMode, GeneratorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContentLoss {
    /// Pixel-space MSE (identity extractor).
    Pixel,
    /// MSE of frozen conv-stack features.
    Feature,
}

impl fmt::Display for ContentLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContentLoss::Pixel => "pixel",
            ContentLoss::Feature => "feature",
        })
    }
}

impl FromStr for ContentLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel" => Ok(ContentLoss::Pixel),
            "feature" => Ok(ContentLoss::Feature),
            _ => Err(Error::Config(format!("unknown content loss {s:?} (expected pixel or feature)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub scale: usize,
    pub iterations: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub sn_enabled: bool,
    pub ablation: Ablation,
    pub fusion_mode: FusionMode,
    pub alpha: f64,
    pub beta: f64,
    /// Generator feature width.
    pub width: usize,
    pub lffb_blocks: usize,
    pub ca_reduction: usize,
    pub global_skip: bool,
    /// First-layer width of the discriminator.
    pub disc_width: usize,
    pub disc_hidden: usize,
    pub sn_power_iterations: usize,
    /// Side of the square HR training crops; 0 trains on whole images.
    pub patch_size: usize,
    pub content_loss: ContentLoss,
    /// Depth of the frozen extractor when `content_loss = feature`.
    pub feature_depth: usize,
    pub adversarial_reduction: Reduction,
    /// Iterations between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
    /// Iterations between validation passes; 0 validates only at the end.
    pub val_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            scale: 2,
            iterations: 2000,
            batch_size: 4,
            seed: 0,
            sn_enabled: true,
            ablation: Ablation::NONE,
            fusion_mode: FusionMode::Weighted,
            alpha: 0.5,
            beta: 0.5,
            width: 32,
            lffb_blocks: 4,
            ca_reduction: 4,
            global_skip: true,
            disc_width: 16,
            disc_hidden: 64,
            sn_power_iterations: 1,
            patch_size: 32,
            content_loss: ContentLoss::Pixel,
            feature_depth: 2,
            adversarial_reduction: Reduction::Mean,
            checkpoint_interval: 0,
            val_interval: 0,
        }
    }
}

pub const KEYS: [&str; 26] = [
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "scale",
    "iterations",
    "batch_size",
    "seed",
    "sn_enabled",
    "ablation",
    "fusion_mode",
    "alpha",
    "beta",
    "width",
    "lffb_blocks",
    "ca_reduction",
    "global_skip",
    "disc_width",
    "disc_hidden",
    "sn_power_iterations",
    "patch_size",
    "content_loss",
    "feature_depth",
    "adversarial_reduction",
    "checkpoint_interval",
    "val_interval",
];

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse_value(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse_value(key, value)?,
            "adam_eps" => self.adam_eps = parse_value(key, value)?,
            "scale" => self.scale = parse_value(key, value)?,
            "iterations" => self.iterations = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "sn_enabled" => self.sn_enabled = parse_bool(key, value)?,
            "ablation" => self.ablation = value.parse()?,
            "fusion_mode" => self.fusion_mode = value.parse()?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "width" => self.width = parse_value(key, value)?,
            "lffb_blocks" => self.lffb_blocks = parse_value(key, value)?,
            "ca_reduction" => self.ca_reduction = parse_value(key, value)?,
            "global_skip" => self.global_skip = parse_bool(key, value)?,
            "disc_width" => self.disc_width = parse_value(key, value)?,
            "disc_hidden" => self.disc_hidden = parse_value(key, value)?,
            "sn_power_iterations" => self.sn_power_iterations = parse_value(key, value)?,
            "patch_size" => self.patch_size = parse_value(key, value)?,
            "content_loss" => self.content_loss = value.parse()?,
            "feature_depth" => self.feature_depth = parse_value(key, value)?,
            "adversarial_reduction" => self.adversarial_reduction = value.parse()?,
            "checkpoint_interval" => self.checkpoint_interval = parse_value(key, value)?,
            "val_interval" => self.val_interval = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "learning_rate" => self.learning_rate.to_string(),
            "adam_beta1" => self.adam_beta1.to_string(),
            "adam_beta2" => self.adam_beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "scale" => self.scale.to_string(),
            "iterations" => self.iterations.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "seed" => self.seed.to_string(),
            "sn_enabled" => self.sn_enabled.to_string(),
            "ablation" => self.ablation.to_string(),
            "fusion_mode" => self.fusion_mode.to_string(),
            "alpha" => self.alpha.to_string(),
            "beta" => self.beta.to_string(),
            "width" => self.width.to_string(),
            "lffb_blocks" => self.lffb_blocks.to_string(),
            "ca_reduction" => self.ca_reduction.to_string(),
            "global_skip" => self.global_skip.to_string(),
            "disc_width" => self.disc_width.to_string(),
            "disc_hidden" => self.disc_hidden.to_string(),
            "sn_power_iterations" => self.sn_power_iterations.to_string(),
            "patch_size" => self.patch_size.to_string(),
            "content_loss" => self.content_loss.to_string(),
            "feature_depth" => self.feature_depth.to_string(),
            "adversarial_reduction" => self.adversarial_reduction.to_string(),
            "checkpoint_interval" => self.checkpoint_interval.to_string(),
            "val_interval" => self.val_interval.to_string(),
            _ => unreachable!("key list and getter out of sync: {key}"),
        }
    }

    /// Applies `key = value` lines on top of the defaults and validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: key {k:?} given twice", no + 1)));
            }
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", no + 1, strip_prefix(&e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::parse(&text)
    }

    /// Every key in canonical order; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        check_scale(self.scale)?;
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if (self.alpha + self.beta - 1.0).abs() > 1e-9 {
            return bad(format!("alpha + beta must equal 1, got {} + {}", self.alpha, self.beta));
        }
        if self.iterations < 1 {
            return bad("iterations must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        if self.patch_size != 0 && (self.patch_size % self.scale != 0 || self.patch_size % 8 != 0) {
            return bad(format!(
                "patch_size {} must be a multiple of 8 and of the scale",
                self.patch_size
            ));
        }
        if self.sn_enabled && self.sn_power_iterations == 0 {
            return bad("sn_power_iterations must be >= 1 with SN enabled".into());
        }
        if !(1..=3).contains(&self.feature_depth) {
            return bad(format!("feature_depth must be 1..=3, got {}", self.feature_depth));
        }
        Ok(())
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            scale: self.scale,
            width: self.width,
            lffb_blocks: self.lffb_blocks,
            ca_reduction: self.ca_reduction,
            ablation: self.ablation,
            fusion: FusionConfig::new(self.fusion_mode, self.alpha, self.beta),
            global_skip: self.global_skip,
            zero_tail: self.global_skip,
        }
    }

    pub fn discriminator_config(&self, input_size: usize) -> DiscriminatorConfig {
        DiscriminatorConfig {
            input_size,
            width: self.disc_width,
            hidden: self.disc_hidden,
            sn_enabled: self.sn_enabled,
            sn_power_iterations: self.sn_power_iterations,
        }
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
