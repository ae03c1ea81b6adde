//! Central finite-difference checks of reverse-mode gradients at 64-bit.
//!
//! Each case draws a random instance (inputs and, for modules, parameters),
//! forms `L = Σ out ⊙ R` with a fixed random `R`, and compares the analytic
//! `∂L/∂θ` with `(L(θ + ε) − L(θ − ε)) / 2ε` on sampled coordinates. The
//! error measure is `|a − n| / max(1, |a|, |n|)`. Coordinates whose
//! perturbation flips a ReLU or clamp branch are skipped (detected by the
//! kink probe) since the function is not differentiable across them, and so
//! are coordinates where halving the step changes the estimate by more than
//! the tolerance.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::losses::{
    adversarial_loss_g, combined_loss_g, content_loss, discriminator_loss, FeatureExtractor, Reduction,
};
use crate::nn::spectral::{spectral_normalize_frozen, SpectralNormState};
use crate::nn::{
    fuse, Ablation, ChannelAttention, Discriminator, DiscriminatorConfig, FusionConfig, FusionMode, Generator,
    GeneratorConfig, Init, Lffb, Module, SelfAttention,
};
use crate::tensor::{
    concat, conv2d, fully_connected, global_avg_pool, matmul, matmul_t, narrow, pixel_shuffle, pixel_unshuffle,
    resample_separable, with_kink_probe, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tolerance: f64,
    /// Coordinates sampled per input tensor (all when the tensor is smaller).
    pub coords_per_tensor: usize,
    pub instances: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            tolerance: 1e-7,
            coords_per_tensor: 6,
            instances: 20,
        }
    }
}

type Eval = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>;

/// Named inputs plus the function under test.
pub struct Instance {
    pub inputs: Vec<(String, Tensor<f64>)>,
    pub eval: Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub instances: usize,
    pub checked: usize,
    pub kinks: usize,
    pub unstable: usize,
    pub max_error: f64,
    pub worst: String,
    pub tolerance: f64,
}

impl GradCheckReport {
    /// Every checked coordinate is within tolerance, and at most 1 in 20
    /// coordinates was dropped as numerically unstable.
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_error < self.tolerance && self.unstable * 20 <= self.checked
    }
}

fn weighted_sum(out: &Tensor<f64>, r: &[f64]) -> f64 {
    out.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InstanceResult {
    pub max_error: f64,
    /// Input and coordinate where `max_error` occurred.
    pub worst: String,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU or clamp kink.
    pub kinks: usize,
    /// Coordinates where the finite difference itself did not converge.
    pub unstable: usize,
}

/// Checks sampled coordinates of every input of one instance.
pub fn check_instance(inst: &Instance, cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Result<InstanceResult> {
    let leaves: Vec<Tensor<f64>> = inst
        .inputs
        .iter()
        .map(|(_, t)| Tensor::leaf(t.shape(), t.to_vec(), true))
        .collect::<Result<_>>()?;
    let (out, print) = with_kink_probe(|| (inst.eval)(&leaves));
    let out = out?;
    let r: Vec<f64> = (0..out.numel()).map(|_| rng.sample(StandardNormal)).collect();
    let loss = out.mul(&Tensor::new(out.shape(), r.clone())?)?.sum();
    loss.backward()?;
    let plain: Vec<Tensor<f64>> = leaves.iter().map(|t| t.detach()).collect();
    let mut res = InstanceResult::default();
    for (i, leaf) in leaves.iter().enumerate() {
        let grad = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let n = leaf.numel();
        let coords: Vec<usize> = if n <= cfg.coords_per_tensor {
            (0..n).collect()
        } else {
            sample(rng, n, cfg.coords_per_tensor).into_vec()
        };
        for c in coords {
            let eval_at = |delta: f64| -> Result<(f64, u64)> {
                let mut data = plain[i].to_vec();
                data[c] += delta;
                let mut args = plain.clone();
                args[i] = Tensor::new(plain[i].shape(), data)?;
                let (o, p) = with_kink_probe(|| (inst.eval)(&args));
                Ok((weighted_sum(&o?, &r), p))
            };
            let (lp, pp) = eval_at(cfg.eps)?;
            let (lm, pm) = eval_at(-cfg.eps)?;
            if pp != print || pm != print {
                res.kinks += 1;
                continue;
            }
            let a = grad[c];
            let rel = |x: f64, y: f64| (x - y).abs() / 1f64.max(x.abs()).max(y.abs());
            let numeric = (lp - lm) / (2.0 * cfg.eps);
            let mut err = rel(a, numeric);
            if err >= cfg.tolerance {
                // Retry at half the step. If the two estimates disagree the
                // truncation error dominates (e.g. next to the pole of the
                // weighted fusion) and the coordinate says nothing either way.
                let (hp, hpp) = eval_at(cfg.eps / 2.0)?;
                let (hm, hpm) = eval_at(-cfg.eps / 2.0)?;
                let half = (hp - hm) / cfg.eps;
                if hpp != print || hpm != print || rel(numeric, half) >= cfg.tolerance {
                    res.unstable += 1;
                    continue;
                }
                err = err.min(rel(a, half));
            }
            res.checked += 1;
            if err > res.max_error || !err.is_finite() {
                res.max_error = if err.is_finite() { err } else { f64::INFINITY };
                res.worst = format!("{}[{c}] analytic {a:e} numeric {numeric:e}", inst.inputs[i].0);
            }
        }
    }
    Ok(res)
}

/// A named family of random instances.
pub struct Case {
    pub name: &'static str,
    pub build: fn(&mut ChaCha8Rng) -> Result<Instance>,
}

fn name_seed(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

pub fn run_case(case: &Case, cfg: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        name: case.name.to_string(),
        instances: cfg.instances,
        checked: 0,
        kinks: 0,
        unstable: 0,
        max_error: 0.0,
        worst: String::new(),
        tolerance: cfg.tolerance,
    };
    for k in 0..cfg.instances {
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(case.name) ^ seed.wrapping_add(k as u64));
        let inst = (case.build)(&mut rng)?;
        let res = check_instance(&inst, cfg, &mut rng)?;
        report.checked += res.checked;
        report.kinks += res.kinks;
        report.unstable += res.unstable;
        if res.max_error > report.max_error {
            report.max_error = res.max_error;
            report.worst = format!("instance {k}: {}", res.worst);
        }
    }
    Ok(report)
}

pub fn find_case(name: &str) -> Result<&'static Case> {
    CASES.iter().find(|c| c.name == name).ok_or_else(|| {
        let names: Vec<&str> = CASES.iter().map(|c| c.name).collect();
        Error::Config(format!("unknown gradcheck case {name:?}; known: {}", names.join(", ")))
    })
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).expect("shape")
}

fn inputs(list: Vec<(&str, Tensor<f64>)>) -> Vec<(String, Tensor<f64>)> {
    list.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
}

fn plain(list: Vec<(&str, Tensor<f64>)>, f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + 'static) -> Instance {
    Instance {
        inputs: inputs(list),
        eval: Box::new(f),
    }
}

/// Inputs `extra` followed by every parameter of `module`; the evaluator
/// rebuilds the module from the perturbed parameters.
fn module_case<M: Module<f64> + Clone + 'static>(
    module: M,
    extra: Vec<(&str, Tensor<f64>)>,
    fwd: impl Fn(&M, &[Tensor<f64>]) -> Result<Tensor<f64>> + 'static,
) -> Instance {
    let k = extra.len();
    let mut list = inputs(extra);
    list.extend(module.named_parameters(""));
    Instance {
        inputs: list,
        eval: Box::new(move |ts| {
            let mut m = module.clone();
            let mut it = ts[k..].iter();
            m.visit_mut("", &mut |_, slot| *slot = it.next().expect("parameter count").clone());
            fwd(&m, &ts[..k])
        }),
    }
}

fn set_param(m: &mut impl Module<f64>, suffix: &str, value: f64) {
    m.visit_mut("", &mut |n, t| {
        if n.ends_with(suffix) {
            *t = Tensor::parameter(t.shape(), vec![value; t.numel()]).expect("shape");
        }
    });
}

fn seed_of(rng: &mut ChaCha8Rng) -> u64 {
    rng.random()
}

/// A small generator with a nonzero self-attention gate and a matching LR
/// input. Weighted fusion has a pole where `αR + βY` vanishes, which random
/// weights hit often; for that mode the last upsampling bias is raised so
/// the fused features stay positive and the map is smooth around the
/// instance.
fn small_generator(rng: &mut ChaCha8Rng, ablation: Ablation, mode: FusionMode) -> Result<(Generator<f64>, Tensor<f64>)> {
    let cfg = GeneratorConfig {
        scale: 2,
        width: 8,
        lffb_blocks: 1,
        ca_reduction: 2,
        ablation,
        fusion: FusionConfig::new(mode, 0.5, 0.5),
        global_skip: true,
        zero_tail: false,
    };
    let mut g = Generator::new(cfg, seed_of(rng))?;
    set_param(&mut g, "gamma", 0.7);
    if mode == FusionMode::Weighted {
        let last = g.upsampling_stages() - 1;
        set_param(&mut g, &format!("up.{last}.bias"), 1.0);
    }
    Ok((g, uniform(rng, &[1, 1, 8, 8], 0.0, 1.0)))
}

fn small_discriminator(rng: &mut ChaCha8Rng) -> Result<Discriminator<f64>> {
    let cfg = DiscriminatorConfig {
        input_size: 16,
        width: 4,
        hidden: 8,
        sn_enabled: true,
        sn_power_iterations: 1,
    };
    let mut d = Discriminator::new(cfg, seed_of(rng))?;
    // settle the SN vectors, then freeze them for the check
    d.forward(&uniform(rng, &[1, 1, 16, 16], 0.0, 1.0))?;
    Ok(d)
}

fn gen_loss_instance(rng: &mut ChaCha8Rng, fx: FeatureExtractor<f64>) -> Result<Instance> {
    let (g, lr) = small_generator(rng, Ablation::NONE, FusionMode::Weighted)?;
    let d = small_discriminator(rng)?;
    let hr = uniform(rng, &[1, 1, 16, 16], 0.0, 1.0);
    Ok(module_case(g, vec![("lr", lr)], move |g, x| {
        let sr = g.forward(&x[0])?;
        let content = content_loss(&sr, &hr, &fx)?;
        let adv = adversarial_loss_g(&d.forward_frozen(&sr)?, Reduction::Mean)?;
        combined_loss_g(&content, &adv)
    }))
}

macro_rules! case {
    ($name:literal, $body:expr) => {
        Case {
            name: $name,
            build: $body,
        }
    };
}

pub static CASES: &[Case] = &[
    case!("add", |r| Ok(plain(
        vec![("a", normal(r, &[3, 4])), ("b", normal(r, &[4]))],
        |x| x[0].add(&x[1])
    ))),
    case!("sub", |r| Ok(plain(
        vec![("a", normal(r, &[2, 1, 3])), ("b", normal(r, &[2, 4, 1]))],
        |x| x[0].sub(&x[1])
    ))),
    case!("mul", |r| Ok(plain(
        vec![("a", normal(r, &[2, 3, 4])), ("b", normal(r, &[3, 1]))],
        |x| x[0].mul(&x[1])
    ))),
    case!("div", |r| Ok(plain(
        vec![("a", normal(r, &[3, 4])), ("b", uniform(r, &[3, 4], 0.5, 2.0))],
        |x| x[0].div(&x[1])
    ))),
    case!("relu", |r| Ok(plain(vec![("x", normal(r, &[5, 5]))], |x| Ok(x[0].relu())))),
    case!("leaky_relu", |r| Ok(plain(vec![("x", normal(r, &[5, 5]))], |x| Ok(x[0].leaky_relu(0.2))))),
    case!("sigmoid", |r| Ok(plain(vec![("x", normal(r, &[5, 5]).scale(3.0))], |x| Ok(x[0].sigmoid())))),
    case!("log", |r| Ok(plain(vec![("x", uniform(r, &[4, 4], 0.3, 3.0))], |x| x[0].log()))),
    case!("exp", |r| Ok(plain(vec![("x", normal(r, &[4, 4]))], |x| Ok(x[0].exp())))),
    case!("square", |r| Ok(plain(vec![("x", normal(r, &[4, 4]))], |x| Ok(x[0].square())))),
    case!("affine_scalar", |r| Ok(plain(vec![("x", normal(r, &[4, 4]))], |x| Ok(x[0]
        .scale(-1.7)
        .add_scalar(0.3)
        .neg())))),
    case!("clamp", |r| Ok(plain(vec![("x", normal(r, &[6, 6]))], |x| Ok(x[0].clamp(-0.5, 0.8))))),
    case!("sum", |r| Ok(plain(vec![("x", normal(r, &[3, 5]))], |x| Ok(x[0].sum())))),
    case!("mean", |r| Ok(plain(vec![("x", normal(r, &[3, 5]))], |x| Ok(x[0].mean())))),
    case!("softmax", |r| Ok(plain(vec![("x", normal(r, &[2, 3, 5]).scale(2.0))], |x| x[0].softmax(2)))),
    case!("softmax_axis1", |r| Ok(plain(vec![("x", normal(r, &[2, 4, 3]))], |x| x[0].softmax(1)))),
    case!("reshape", |r| Ok(plain(vec![("x", normal(r, &[2, 6]))], |x| x[0]
        .reshape(&[3, 4])?
        .square()
        .reshape(&[12])))),
    case!("matmul", |r| Ok(plain(
        vec![("a", normal(r, &[3, 4])), ("b", normal(r, &[4, 5]))],
        |x| matmul(&x[0], &x[1])
    ))),
    case!("matmul_transposed", |r| Ok(plain(
        vec![
            ("a", normal(r, &[2, 4, 3])),
            ("b", normal(r, &[2, 5, 4])),
            ("c", normal(r, &[2, 3, 4])),
            ("d", normal(r, &[2, 4, 5]))
        ],
        |x| {
            let tt = matmul_t(&x[0], &x[1], true, true)?;
            let nt = matmul_t(&x[2], &x[1], false, true)?;
            let tn = matmul_t(&x[0], &x[3], true, false)?;
            tt.add(&nt)?.add(&tn)
        }
    ))),
    case!("fully_connected", |r| Ok(plain(
        vec![("x", normal(r, &[3, 4])), ("w", normal(r, &[4, 2])), ("b", normal(r, &[2]))],
        |x| fully_connected(&x[0], &x[1], &x[2])
    ))),
    case!("conv2d", |r| Ok(plain(
        vec![("x", normal(r, &[2, 2, 5, 6])), ("w", normal(r, &[3, 2, 3, 3])), ("b", normal(r, &[3]))],
        |x| conv2d(&x[0], &x[1], Some(&x[2]), 1, 1)
    ))),
    case!("conv2d_strided", |r| Ok(plain(
        vec![("x", normal(r, &[1, 2, 7, 6])), ("w", normal(r, &[2, 2, 3, 3])), ("b", normal(r, &[2]))],
        |x| conv2d(&x[0], &x[1], Some(&x[2]), 2, 1)
    ))),
    case!("conv2d_pointwise", |r| Ok(plain(
        vec![("x", normal(r, &[2, 3, 4, 4])), ("w", normal(r, &[2, 3, 1, 1])), ("b", normal(r, &[2]))],
        |x| conv2d(&x[0], &x[1], Some(&x[2]), 1, 0)
    ))),
    case!("concat", |r| Ok(plain(
        vec![("a", normal(r, &[2, 1, 3])), ("b", normal(r, &[2, 2, 3]))],
        |x| Ok(concat(&[x[0].clone(), x[1].clone()], 1)?.square())
    ))),
    case!("narrow", |r| Ok(plain(vec![("x", normal(r, &[4, 3, 2]))], |x| Ok(narrow(&x[0], 0, 1, 2)?.square())))),
    case!("pixel_shuffle", |r| Ok(plain(vec![("x", normal(r, &[1, 8, 2, 3]))], |x| Ok(pixel_shuffle(&x[0], 2)?.square())))),
    case!("pixel_unshuffle", |r| Ok(plain(vec![("x", normal(r, &[1, 2, 4, 4]))], |x| Ok(pixel_unshuffle(&x[0], 2)?.square())))),
    case!("global_avg_pool", |r| Ok(plain(vec![("x", normal(r, &[2, 3, 3, 4]))], |x| global_avg_pool(&x[0])))),
    case!("resample_separable", |r| {
        let ry = normal(r, &[6, 3]).to_vec();
        let rx = normal(r, &[5, 4]).to_vec();
        Ok(plain(vec![("x", normal(r, &[1, 2, 3, 4]))], move |x| resample_separable(&x[0], &ry, &rx, 6, 5)))
    }),
    case!("lffb", |r| {
        let block = Lffb::<f64>::new(&mut Init::new(seed_of(r)), 4);
        Ok(module_case(block, vec![("x", normal(r, &[1, 4, 8, 8]))], |m, x| m.forward(&x[0])))
    }),
    case!("channel_attention", |r| {
        let ca = ChannelAttention::<f64>::new(&mut Init::new(seed_of(r)), 8, 4)?;
        Ok(module_case(ca, vec![("x", normal(r, &[2, 8, 3, 3]))], |m, x| m.forward(&x[0])))
    }),
    case!("self_attention", |r| {
        let mut sa = SelfAttention::<f64>::new(&mut Init::new(seed_of(r)), 8)?;
        set_param(&mut sa, "gamma", 0.6);
        Ok(module_case(sa, vec![("x", normal(r, &[1, 8, 4, 4]))], |m, x| m.forward(&x[0])))
    }),
    case!("fuse_direct", |r| Ok(plain(
        vec![("r", normal(r, &[2, 3, 3])), ("y", normal(r, &[2, 3, 3]))],
        |x| fuse(&x[0], &x[1], &FusionConfig::new(FusionMode::Direct, 0.4, 0.6))
    ))),
    case!("fuse_weighted", |r| Ok(plain(
        vec![("r", uniform(r, &[2, 3, 3], 0.1, 2.0)), ("y", uniform(r, &[2, 3, 3], 0.1, 2.0))],
        |x| fuse(&x[0], &x[1], &FusionConfig::new(FusionMode::Weighted, 0.5, 0.5))
    ))),
    case!("spectral_normalize", |r| {
        let mut st = SpectralNormState::new(&[4, 2, 3, 3], 1, r)?;
        let w = normal(r, &[4, 2, 3, 3]);
        let wd = w.to_vec();
        st.update(&wd, 4, 18, 3)?;
        Ok(plain(vec![("w", w)], move |x| spectral_normalize_frozen(&x[0], &st)))
    }),
    case!("generator", |r| {
        let (g, lr) = small_generator(r, Ablation::NONE, FusionMode::Weighted)?;
        Ok(module_case(g, vec![("lr", lr)], |m, x| m.forward(&x[0])))
    }),
    case!("generator_direct", |r| {
        let (g, lr) = small_generator(r, Ablation::NONE, FusionMode::Direct)?;
        Ok(module_case(g, vec![("lr", lr)], |m, x| m.forward(&x[0])))
    }),
    case!("generator_ablated", |r| {
        let (g, lr) = small_generator(r, "SA,LFFB".parse()?, FusionMode::Weighted)?;
        Ok(module_case(g, vec![("lr", lr)], |m, x| m.forward(&x[0])))
    }),
    case!("discriminator", |r| {
        let d = small_discriminator(r)?;
        Ok(module_case(d, vec![("x", uniform(r, &[2, 1, 16, 16], 0.0, 1.0))], |m, x| m.forward_frozen(&x[0])))
    }),
    // the reference image is a constant target, so only `sr` is checked
    case!("content_loss_pixel", |r| {
        let hr = normal(r, &[2, 1, 4, 4]);
        Ok(plain(vec![("sr", normal(r, &[2, 1, 4, 4]))], move |x| {
            content_loss(&x[0], &hr, &FeatureExtractor::identity())
        }))
    }),
    case!("content_loss_feature", |r| {
        let fx = FeatureExtractor::frozen_conv(seed_of(r), 3)?;
        Ok(plain(
            vec![("sr", uniform(r, &[1, 1, 16, 16], 0.0, 1.0))],
            {
                let hr = uniform(r, &[1, 1, 16, 16], 0.0, 1.0);
                move |x| content_loss(&x[0], &hr, &fx)
            },
        ))
    }),
    case!("adversarial_loss", |r| Ok(plain(
        vec![("logits", normal(r, &[4, 1]))],
        |x| {
            let d = x[0].sigmoid();
            adversarial_loss_g(&d, Reduction::Sum)?.add(&adversarial_loss_g(&d, Reduction::Mean)?)
        }
    ))),
    case!("discriminator_loss", |r| Ok(plain(
        vec![("real_logits", normal(r, &[3, 1])), ("fake_logits", normal(r, &[3, 1]))],
        |x| discriminator_loss(&x[0].sigmoid(), &x[1].sigmoid())
    ))),
    case!("combined_loss", |r| Ok(plain(
        vec![("content", normal(r, &[])), ("adversarial", normal(r, &[]))],
        |x| combined_loss_g(&x[0], &x[1])
    ))),
    case!("generator_loss_pixel", |r| gen_loss_instance(r, FeatureExtractor::identity())),
    case!("generator_loss_feature", |r| {
        let fx = FeatureExtractor::frozen_conv(seed_of(r), 2)?;
        gen_loss_instance(r, fx)
    }),
];
