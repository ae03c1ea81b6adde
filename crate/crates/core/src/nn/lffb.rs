//! Local fusion feature block.
//!
//! Three parallel branches with 3x3, 5x5 and 7x7 kernels see the same block
//! input. Each branch is three same-padded convolutions with a single ReLU
//! after the first. Branch outputs are concatenated on the channel axis,
//! fused back to `C` channels by a 1x1 convolution, and added to the block
//! input.

use super::{join, Conv2d, Init, Module};
use crate::error::{Error, Result};
use crate::tensor::{concat, Element, Tensor};

pub const BRANCH_KERNELS: [usize; 3] = [3, 5, 7];

#[derive(Clone)]
pub struct Branch<T: Element> {
    pub kernel: usize,
    pub convs: [Conv2d<T>; 3],
}

impl<T: Element> Branch<T> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.convs[0].forward(x)?.relu();
        let h = self.convs[1].forward(&h)?;
        self.convs[2].forward(&h)
    }
}

#[derive(Clone)]
pub struct Lffb<T: Element> {
    pub channels: usize,
    pub branches: [Branch<T>; 3],
    pub fuse: Conv2d<T>,
}

impl<T: Element> Lffb<T> {
    pub fn new(init: &mut Init, channels: usize) -> Self {
        let branches = BRANCH_KERNELS.map(|k| Branch {
            kernel: k,
            convs: [0, 1, 2].map(|_| Conv2d::new(init, channels, channels, k, 1)),
        });
        Lffb {
            channels,
            branches,
            fuse: Conv2d::new(init, 3 * channels, channels, 1, 1),
        }
    }

    /// Every weight and bias zero: the block is the identity map.
    pub fn zeroed(channels: usize) -> Self {
        Lffb {
            channels,
            branches: BRANCH_KERNELS.map(|k| Branch {
                kernel: k,
                convs: [0, 1, 2].map(|_| Conv2d::zeroed(channels, channels, k)),
            }),
            fuse: Conv2d::zeroed(3 * channels, channels, 1),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() != 4 || x.shape()[1] != self.channels {
            return Err(Error::Dimension(format!(
                "LFFB with {} channels got input {:?}",
                self.channels,
                x.shape()
            )));
        }
        let outs = self
            .branches
            .iter()
            .map(|b| b.forward(x))
            .collect::<Result<Vec<_>>>()?;
        let fused = self.fuse.forward(&concat(&outs, 1)?)?;
        fused.add(x)
    }
}

impl<T: Element> Module<T> for Lffb<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for b in &self.branches {
            let bp = join(prefix, &format!("branch{}", b.kernel));
            for (i, c) in b.convs.iter().enumerate() {
                c.visit(&join(&bp, &format!("conv{}", i + 1)), f);
            }
        }
        self.fuse.visit(&join(prefix, "fuse"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for b in &mut self.branches {
            let bp = join(prefix, &format!("branch{}", b.kernel));
            for (i, c) in b.convs.iter_mut().enumerate() {
                c.visit_mut(&join(&bp, &format!("conv{}", i + 1)), f);
            }
        }
        self.fuse.visit_mut(&join(prefix, "fuse"), f);
    }
}

/// Residual conv–ReLU–conv block that stands in for an LFFB when the
/// multi-scale blocks are ablated.
#[derive(Clone)]
pub struct PlainBlock<T: Element> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
}

impl<T: Element> PlainBlock<T> {
    pub fn new(init: &mut Init, channels: usize) -> Self {
        PlainBlock {
            conv1: Conv2d::new(init, channels, channels, 3, 1),
            conv2: Conv2d::new(init, channels, channels, 3, 1),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.conv1.forward(x)?.relu();
        self.conv2.forward(&h)?.add(x)
    }
}

impl<T: Element> Module<T> for PlainBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let mut init = Init::new(3);
        let mut block = Lffb::<f64>::new(&mut init, 4);
        block.visit_mut("", &mut |name, t| {
            if name.ends_with("bias") {
                *t = Tensor::parameter(t.shape(), vec![0.0; t.numel()]).unwrap();
            }
        });
        let y = block.forward(&Tensor::zeros(&[1, 4, 8, 8])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn preserves_spatial_shape() {
        let mut init = Init::new(1);
        let block = Lffb::<f32>::new(&mut init, 2);
        for (h, w) in [(7, 7), (9, 12), (16, 8)] {
            let y = block.forward(&Tensor::ones(&[2, 2, h, w])).unwrap();
            assert_eq!(y.shape(), &[2, 2, h, w]);
        }
    }

    #[test]
    fn zeroed_block_is_identity() {
        let block = Lffb::<f64>::zeroed(3);
        let x = Tensor::new(&[1, 3, 7, 7], (0..147).map(|i| (i as f64).cos()).collect()).unwrap();
        assert_eq!(block.forward(&x).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn parameter_names_follow_dotted_paths() {
        let mut init = Init::new(0);
        let block = Lffb::<f32>::new(&mut init, 2);
        let names: Vec<String> = block.named_parameters("generator.lffb.0").into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "generator.lffb.0.branch3.conv1.weight");
        assert!(names.contains(&"generator.lffb.0.branch7.conv3.bias".to_string()));
        assert_eq!(names.last().unwrap(), "generator.lffb.0.fuse.bias");
        assert_eq!(names.len(), 3 * 3 * 2 + 2);
    }

    #[test]
    fn wrong_channels_rejected() {
        let mut init = Init::new(0);
        let block = Lffb::<f32>::new(&mut init, 4);
        assert!(matches!(
            block.forward(&Tensor::zeros(&[1, 3, 8, 8])),
            Err(Error::Dimension(_))
        ));
    }
}
