//! Alternating GAN training, evaluation and the ablation grids.

pub mod ablate;
pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod evaluate;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetManifest, ImageBuffer, Split};
use crate::error::{Error, Result};
use crate::losses::{
    adversarial_loss_g, combined_loss_g, content_loss, discriminator_loss, FeatureExtractor, LossReport,
};
use crate::metrics::{psnr, ssim, SsimMode};
use crate::nn::{load_parameters, Discriminator, Generator, Module};
use crate::tensor::{concat, narrow, Tensor};

pub use ablate::{ablate, AblationGrids, AblationRow};
pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use config::{ContentLoss, TrainConfig};
pub use evaluate::{evaluate, evaluate_checkpoint, Candidate};

pub const LOG_HEADER: &str = "iter,g_loss,d_loss,content,adversarial,val_psnr,val_ssim";
/// Seed of the frozen extractor behind the feature content loss.
pub const CONTENT_EXTRACTOR_SEED: u64 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iter: u64,
    pub g_loss: f64,
    pub d_loss: f64,
    pub content: f64,
    pub adversarial: f64,
    pub val_psnr: Option<f64>,
    pub val_ssim: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainLog {
    /// Fixed header, then one row per iteration. Floats use the shortest
    /// representation that round-trips; validation columns are empty on
    /// iterations without a validation pass.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{LOG_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.iter,
                r.g_loss,
                r.d_loss,
                r.content,
                r.adversarial,
                opt(r.val_psnr),
                opt(r.val_ssim)
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn g_losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.g_loss).collect()
    }

    /// Last row carrying validation numbers.
    pub fn last_validation(&self) -> Option<(f64, f64)> {
        self.rows
            .iter()
            .rev()
            .find_map(|r| Some((r.val_psnr?, r.val_ssim?)))
    }
}

/// Everything that changes during a step; cloned before each step so a
/// failed step can be rolled back.
#[derive(Clone)]
struct State {
    generator: Generator<f32>,
    discriminator: Discriminator<f32>,
    g_opt: AdamState<f32>,
    d_opt: AdamState<f32>,
    iteration: u64,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub g_opt: AdamState<f32>,
    pub d_opt: AdamState<f32>,
    pub iteration: u64,
    pub log: TrainLog,
    extractor: FeatureExtractor<f32>,
    train: Vec<(ImageBuffer, ImageBuffer)>,
    val: Vec<(String, ImageBuffer, ImageBuffer)>,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig, manifest: &DatasetManifest) -> Result<Self> {
        config.validate()?;
        let scale = manifest.scale()?;
        if scale != config.scale {
            return Err(Error::Config(format!(
                "config scale {} does not match dataset scale {scale}",
                config.scale
            )));
        }
        let train: Vec<(ImageBuffer, ImageBuffer)> = manifest
            .load_split(Split::Train)?
            .into_iter()
            .map(|(_, hr, lr)| (hr, lr))
            .collect();
        if train.is_empty() {
            return Err(Error::Contract("manifest has no training records".into()));
        }
        let val = manifest.load_split(Split::Val)?;
        let (h, w) = train[0].0.dims();
        if train.iter().any(|(hr, _)| hr.dims() != (h, w)) {
            return Err(Error::Dimension("training images differ in size".into()));
        }
        let patch = if config.patch_size == 0 {
            if h != w {
                return Err(Error::Config("whole-image training needs square images".into()));
            }
            h
        } else {
            config.patch_size
        };
        if patch > h.min(w) {
            return Err(Error::Config(format!("patch_size {patch} exceeds image size {h}x{w}")));
        }
        let generator = Generator::new(config.generator_config(), config.seed)?;
        let discriminator = Discriminator::new(config.discriminator_config(patch), config.seed.wrapping_add(1))?;
        let extractor = match config.content_loss {
            ContentLoss::Pixel => FeatureExtractor::identity(),
            ContentLoss::Feature => FeatureExtractor::frozen_conv(CONTENT_EXTRACTOR_SEED, config.feature_depth)?,
        };
        let rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
        Ok(Trainer {
            config,
            generator,
            discriminator,
            g_opt: AdamState::default(),
            d_opt: AdamState::default(),
            iteration: 0,
            log: TrainLog::default(),
            extractor,
            train,
            val,
            rng,
        })
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.config.learning_rate,
            beta1: self.config.adam_beta1,
            beta2: self.config.adam_beta2,
            eps: self.config.adam_eps,
        }
    }

    pub fn patch_size(&self) -> usize {
        self.discriminator.config.input_size
    }

    /// Random aligned `(lr, hr)` crops as `[B,1,·,·]` tensors in `[0,1]`.
    pub fn sample_batch(&mut self) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let s = self.config.scale;
        let p = self.patch_size();
        let pl = p / s;
        let mut lrs = Vec::with_capacity(self.config.batch_size);
        let mut hrs = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let (hr, lr) = &self.train[self.rng.random_range(0..self.train.len())];
            let y = self.rng.random_range(0..=lr.height - pl);
            let x = self.rng.random_range(0..=lr.width - pl);
            lrs.push(lr.crop(y, x, pl, pl)?);
            hrs.push(hr.crop(y * s, x * s, p, p)?);
        }
        let lr = ImageBuffer::batch_to_tensor(&lrs.iter().collect::<Vec<_>>())?;
        let hr = ImageBuffer::batch_to_tensor(&hrs.iter().collect::<Vec<_>>())?;
        Ok((lr, hr))
    }

    /// One discriminator update on real `hr` and generated `fake` (which
    /// should be detached). Touches only discriminator parameters, moments
    /// and SN vectors.
    pub fn discriminator_step(&mut self, hr: &Tensor<f32>, fake: &Tensor<f32>) -> Result<f64> {
        self.discriminator.zero_grad();
        let n = hr.shape()[0];
        let both = concat(&[hr.clone(), fake.detach()], 0)?;
        let probs = self.discriminator.forward(&both)?;
        self.check_tensor("discriminator output", &probs)?;
        let d_real = narrow(&probs, 0, 0, n)?;
        let d_fake = narrow(&probs, 0, n, n)?;
        let loss = discriminator_loss(&d_real, &d_fake)?;
        let value = loss.item() as f64;
        self.check_finite("d_loss", value)?;
        loss.backward()?;
        let cfg = self.adam();
        self.d_opt
            .step(&cfg, &mut self.discriminator, "discriminator")
            .map_err(|e| self.non_finite(e))?;
        Ok(value)
    }

    /// One generator update given `sr = G(lr)` (with its graph) and the
    /// matching `hr`. Returns `(content, adversarial)`.
    pub fn generator_step(&mut self, sr: &Tensor<f32>, hr: &Tensor<f32>) -> Result<(f64, f64)> {
        self.generator.zero_grad();
        let content = content_loss(sr, hr, &self.extractor)?;
        self.check_tensor("generator output", sr)?;
        let d_sr = self.discriminator.forward_frozen(sr)?;
        self.check_tensor("discriminator output", &d_sr)?;
        let adv = adversarial_loss_g(&d_sr, self.config.adversarial_reduction)?;
        let total = combined_loss_g(&content, &adv)?;
        let (c, a) = (content.item() as f64, adv.item() as f64);
        self.check_finite("content loss", c)?;
        self.check_finite("adversarial loss", a)?;
        self.check_finite("g_loss", total.item() as f64)?;
        total.backward()?;
        let cfg = self.adam();
        self.g_opt
            .step(&cfg, &mut self.generator, "generator")
            .map_err(|e| self.non_finite(e))?;
        Ok((c, a))
    }

    fn check_finite(&self, what: &str, v: f64) -> Result<()> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                what: format!("{what} ({v})"),
                iteration: self.iteration + 1,
                checkpoint: None,
            })
        }
    }

    fn check_tensor(&self, what: &str, t: &Tensor<f32>) -> Result<()> {
        match t.data().iter().find(|v| !v.is_finite()) {
            Some(v) => self.check_finite(what, *v as f64),
            None => Ok(()),
        }
    }

    fn non_finite(&self, e: Error) -> Error {
        match e {
            Error::Numerical(msg) => Error::NonFinite {
                what: msg,
                iteration: self.iteration + 1,
                checkpoint: None,
            },
            other => other,
        }
    }

    fn snapshot(&self) -> State {
        State {
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            g_opt: self.g_opt.clone(),
            d_opt: self.d_opt.clone(),
            iteration: self.iteration,
        }
    }

    fn restore(&mut self, s: State) {
        self.generator = s.generator;
        self.discriminator = s.discriminator;
        self.g_opt = s.g_opt;
        self.d_opt = s.d_opt;
        self.iteration = s.iteration;
    }

    /// Sample a batch, update D on `(hr, G(lr))`, then update G. On error
    /// the models and optimizer state are rolled back.
    pub fn step(&mut self) -> Result<LossReport> {
        let saved = self.snapshot();
        let result = (|| {
            let (lr, hr) = self.sample_batch()?;
            let sr = self.generator.forward(&lr)?;
            let d_loss = self.discriminator_step(&hr, &sr.detach())?;
            let (content, adv) = self.generator_step(&sr, &hr)?;
            Ok(LossReport::new(content, adv, d_loss))
        })();
        match result {
            Ok(r) => {
                self.iteration += 1;
                Ok(r)
            }
            Err(e) => {
                self.restore(saved);
                Err(e)
            }
        }
    }

    /// Mean windowed SSIM and PSNR of `G(lr)` against `hr` over the
    /// validation split.
    pub fn validate(&self) -> Result<(f64, f64)> {
        if self.val.is_empty() {
            return Err(Error::Contract("manifest has no validation records".into()));
        }
        let (mut p, mut s) = (0.0, 0.0);
        for (_, hr, lr) in &self.val {
            let sr = upscale(&self.generator, lr)?;
            p += psnr(hr, &sr, hr.range)?;
            s += ssim(hr, &sr, SsimMode::Windowed)?;
        }
        let n = self.val.len() as f64;
        Ok((p / n, s / n))
    }

    /// Runs the configured number of iterations. With `out_dir`, writes
    /// `log.csv`, periodic `checkpoint_<iter>.fatc` files and the final
    /// `checkpoint.fatc`; on a non-finite value the pre-step state goes to
    /// `last_good.fatc` and the run aborts.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<TrainLog> {
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let total = self.config.iterations;
        while self.iteration < total {
            let report = match self.step() {
                Ok(r) => r,
                Err(Error::NonFinite { what, iteration, .. }) => {
                    let mut dumped = None;
                    if let Some(dir) = out_dir {
                        let path = dir.join("last_good.fatc");
                        self.checkpoint().save(&path)?;
                        self.log.write_csv(&dir.join("log.csv"))?;
                        dumped = Some(path);
                    }
                    return Err(Error::NonFinite {
                        what,
                        iteration,
                        checkpoint: dumped,
                    });
                }
                Err(e) => return Err(e),
            };
            let it = self.iteration;
            let vi = self.config.val_interval;
            let (val_psnr, val_ssim) = if !self.val.is_empty() && (it == total || (vi > 0 && it % vi == 0)) {
                let (p, s) = self.validate()?;
                (Some(p), Some(s))
            } else {
                (None, None)
            };
            log::debug!(
                "iter {it}: g {:.6} d {:.6} content {:.6} adv {:.6}",
                report.combined,
                report.d_loss,
                report.content,
                report.adversarial
            );
            self.log.rows.push(LogRow {
                iter: it,
                g_loss: report.combined,
                d_loss: report.d_loss,
                content: report.content,
                adversarial: report.adversarial,
                val_psnr,
                val_ssim,
            });
            let ci = self.config.checkpoint_interval;
            if let (Some(dir), true) = (out_dir, ci > 0 && it % ci == 0 && it != total) {
                self.checkpoint().save(&dir.join(format!("checkpoint_{it:06}.fatc")))?;
            }
        }
        if let Some(dir) = out_dir {
            self.log.write_csv(&dir.join("log.csv"))?;
            self.checkpoint().save(&dir.join("checkpoint.fatc"))?;
        }
        Ok(self.log.clone())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.iteration, self.config.to_text());
        for (n, t) in self.generator.named_parameters("generator") {
            c.put(&n, &t);
        }
        for (n, t) in self.discriminator.named_parameters("discriminator") {
            c.put(&n, &t);
        }
        for (i, st) in self.discriminator.sn.iter().enumerate() {
            c.put(&format!("discriminator.sn.{i}.u"), &vector(&st.u));
            c.put(&format!("discriminator.sn.{i}.v"), &vector(&st.v));
        }
        for (name, st) in [("generator", &self.g_opt), ("discriminator", &self.d_opt)] {
            c.put(&format!("adam.{name}.step"), &vector(&[st.step as f64]));
            for (k, m) in &st.m {
                c.put(&format!("adam.m.{k}"), &Tensor::new(&[m.len()], m.clone()).expect("1-d"));
            }
            for (k, v) in &st.v {
                c.put(&format!("adam.v.{k}"), &Tensor::new(&[v.len()], v.clone()).expect("1-d"));
            }
        }
        c
    }

    /// Rebuilds a trainer from a checkpoint: models, SN vectors and
    /// optimizer moments. The batch sampler restarts from its seed.
    pub fn from_checkpoint(ckpt: &Checkpoint, manifest: &DatasetManifest) -> Result<Self> {
        let config = TrainConfig::parse(&ckpt.config)?;
        let mut t = Trainer::new(config, manifest)?;
        load_parameters(&mut t.generator, "generator", &|n| ckpt.get(n).and_then(|r| r.ok()))?;
        load_parameters(&mut t.discriminator, "discriminator", &|n| ckpt.get(n).and_then(|r| r.ok()))?;
        for (i, st) in t.discriminator.sn.iter_mut().enumerate() {
            let u = ckpt.require::<f64>(&format!("discriminator.sn.{i}.u"))?.to_vec();
            let v = ckpt.require::<f64>(&format!("discriminator.sn.{i}.v"))?.to_vec();
            if u.len() != st.u.len() || v.len() != st.v.len() {
                return Err(Error::Dimension(format!("SN vectors of layer {i} have the wrong size")));
            }
            st.u = u;
            st.v = v;
        }
        for (name, prefix, st) in [
            ("generator", "generator.", &mut t.g_opt),
            ("discriminator", "discriminator.", &mut t.d_opt),
        ] {
            st.step = ckpt.require::<f64>(&format!("adam.{name}.step"))?.item() as u64;
            for n in ckpt.names() {
                if let Some(k) = n.strip_prefix("adam.m.").filter(|k| k.starts_with(prefix)) {
                    st.m.insert(k.to_string(), ckpt.require::<f32>(n)?.to_vec());
                }
                if let Some(k) = n.strip_prefix("adam.v.").filter(|k| k.starts_with(prefix)) {
                    st.v.insert(k.to_string(), ckpt.require::<f32>(n)?.to_vec());
                }
            }
        }
        t.iteration = ckpt.iteration;
        Ok(t)
    }
}

fn vector(v: &[f64]) -> Tensor<f64> {
    Tensor::new(&[v.len()], v.to_vec()).expect("1-d")
}

/// `G(lr)` as an image in the range of `lr`.
pub fn upscale(generator: &Generator<f32>, lr: &ImageBuffer) -> Result<ImageBuffer> {
    let x = ImageBuffer::batch_to_tensor::<f32>(&[lr])?;
    let y = generator.forward(&x)?.detach();
    Ok(ImageBuffer::batch_from_tensor(&y, lr.range)?.remove(0))
}

/// Config and generator stored in a checkpoint.
pub fn load_generator(ckpt: &Checkpoint) -> Result<(TrainConfig, Generator<f32>)> {
    let config = TrainConfig::parse(&ckpt.config)?;
    let mut g = Generator::new(config.generator_config(), config.seed)?;
    load_parameters(&mut g, "generator", &|n| ckpt.get(n).and_then(|r| r.ok()))?;
    Ok((config, g))
}

/// Paths written by [`Trainer::run`].
pub fn output_paths(out_dir: &Path) -> (PathBuf, PathBuf) {
    (out_dir.join("log.csv"), out_dir.join("checkpoint.fatc"))
}
