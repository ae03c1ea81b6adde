use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first and second moments, keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Element> {
    pub step: u64,
    pub m: BTreeMap<String, Vec<T>>,
    pub v: BTreeMap<String, Vec<T>>,
}

impl<T: Element> Default for AdamState<T> {
    fn default() -> Self {
        AdamState {
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// Bias-corrected Adam update of one flat parameter, in place.
pub fn adam_update<T: Element>(cfg: &AdamConfig, step: u64, p: &mut [T], g: &[T], m: &mut [T], v: &mut [T]) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..p.len() {
        let gi = g[i].as_f64();
        let mi = cfg.beta1 * m[i].as_f64() + (1.0 - cfg.beta1) * gi;
        let vi = cfg.beta2 * v[i].as_f64() + (1.0 - cfg.beta2) * gi * gi;
        m[i] = T::of(mi);
        v[i] = T::of(vi);
        let update = cfg.lr * (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
        p[i] = T::of(p[i].as_f64() - update);
    }
}

impl<T: Element> AdamState<T> {
    /// One Adam step over every parameter of `module`, using the gradients
    /// accumulated on the current leaves. Parameters without a gradient are
    /// treated as having a zero gradient. Non-finite gradients abort the
    /// step before any parameter changes.
    pub fn step<M: Module<T>>(&mut self, cfg: &AdamConfig, module: &mut M, prefix: &str) -> Result<()> {
        let mut grads: Vec<(String, Option<Vec<T>>)> = Vec::new();
        module.visit(prefix, &mut |name, t| grads.push((name.to_string(), t.grad())));
        for (name, g) in &grads {
            if let Some(g) = g {
                if let Some(bad) = g.iter().find(|v| !v.as_f64().is_finite()) {
                    return Err(Error::Numerical(format!(
                        "non-finite gradient {} in parameter {name}",
                        bad.as_f64()
                    )));
                }
            }
        }
        self.step += 1;
        let step = self.step;
        let mut grads = grads.into_iter();
        let mut err = None;
        module.visit_mut(prefix, &mut |name, slot| {
            let (gname, g) = grads.next().expect("visit order is stable");
            debug_assert_eq!(gname, name);
            let n = slot.numel();
            let g = g.unwrap_or_else(|| vec![T::zero(); n]);
            let m = self.m.entry(name.to_string()).or_insert_with(|| vec![T::zero(); n]);
            let v = self.v.entry(name.to_string()).or_insert_with(|| vec![T::zero(); n]);
            if m.len() != n || v.len() != n {
                err = Some(Error::Dimension(format!("adam moments for {name} have the wrong size")));
                return;
            }
            let mut p = slot.to_vec();
            adam_update(cfg, step, &mut p, &g, m, v);
            *slot = Tensor::parameter(slot.shape(), p).expect("same shape");
        });
        err.map_or(Ok(()), Err)
    }
}
