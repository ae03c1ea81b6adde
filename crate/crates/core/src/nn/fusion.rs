//! Combination of the channel-attention output `R` and the self-attention
//! output `Y`.
//!
//! * direct: `αR + βY`
//! * weighted: `((αR)² + (βY)²) / (αR + βY + ε)`, elementwise

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    Direct,
    Weighted,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Direct => "direct",
            FusionMode::Weighted => "weighted",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(FusionMode::Direct),
            "weighted" => Ok(FusionMode::Weighted),
            other => Err(Error::Config(format!(
                "unknown fusion mode {other:?} (expected direct or weighted)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub alpha: f64,
    pub beta: f64,
    /// Guard added to the weighted-mode denominator.
    pub eps: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            mode: FusionMode::Weighted,
            alpha: 0.5,
            beta: 0.5,
            eps: 1e-8,
        }
    }
}

impl FusionConfig {
    pub fn new(mode: FusionMode, alpha: f64, beta: f64) -> Self {
        FusionConfig {
            mode,
            alpha,
            beta,
            ..Default::default()
        }
    }
}

pub fn fuse<T: Element>(r: &Tensor<T>, y: &Tensor<T>, cfg: &FusionConfig) -> Result<Tensor<T>> {
    if r.shape() != y.shape() {
        return Err(Error::Dimension(format!(
            "fuse operands differ: {:?} vs {:?}",
            r.shape(),
            y.shape()
        )));
    }
    let a = r.scale(cfg.alpha);
    let b = y.scale(cfg.beta);
    match cfg.mode {
        FusionMode::Direct => a.add(&b),
        FusionMode::Weighted => {
            let denom = a.add(&b)?.add_scalar(cfg.eps);
            a.square().add(&b.square())?.div(&denom)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: Vec<f64>) -> Tensor<f64> {
        Tensor::new(&[v.len()], v).unwrap()
    }

    #[test]
    fn direct_half_half_of_equal_inputs_is_identity() {
        let x = t(vec![1.5, -2.0, 0.0, 7.25]);
        let cfg = FusionConfig::new(FusionMode::Direct, 0.5, 0.5);
        assert_eq!(fuse(&x, &x, &cfg).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn weighted_equal_positive_inputs_halve() {
        let x = t(vec![0.5, 1.0, 3.0, 100.0]);
        let cfg = FusionConfig::new(FusionMode::Weighted, 0.5, 0.5);
        let out = fuse(&x, &x, &cfg).unwrap();
        for (o, v) in out.data().iter().zip(x.data()) {
            // (0.25x² + 0.25x²) / (x + ε) = 0.5x · x/(x+ε)
            assert!((o - 0.5 * v).abs() <= 0.5 * cfg.eps + 1e-15);
        }
    }

    #[test]
    fn weighted_vanishing_denominator_stays_finite() {
        let r = t(vec![1.0, 0.0]);
        let y = t(vec![-1.0, 0.0]);
        let cfg = FusionConfig::new(FusionMode::Weighted, 0.5, 0.5);
        let out = fuse(&r, &y, &cfg).unwrap();
        assert!(out.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn shape_mismatch() {
        let cfg = FusionConfig::default();
        assert!(fuse(&t(vec![1.0]), &t(vec![1.0, 2.0]), &cfg).is_err());
    }

    #[test]
    fn mode_parses() {
        assert_eq!("direct".parse::<FusionMode>().unwrap(), FusionMode::Direct);
        assert!("softmax".parse::<FusionMode>().is_err());
    }
}
