use rand::Rng;

use super::conv::Conv2d;
use super::norm::{BatchNorm2d, BatchNormCache};
use super::ops::{relu_backward, relu_inplace};
use super::param::{Module, Param};
use crate::error::Result;
use crate::tensor::Tensor;

/// conv -> batch norm -> ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

pub struct ConvBnReluCache {
    input: Tensor,
    bn: BatchNormCache,
    output: Tensor,
}

impl ConvBnRelu {
    pub fn new<R: Rng>(name: &str, conv: impl FnOnce(&str, &mut R) -> Conv2d, rng: &mut R) -> Self {
        let conv = conv(&format!("{name}.conv"), rng);
        let bn = BatchNorm2d::new(&format!("{name}.bn"), conv.out_channels());
        ConvBnRelu { conv, bn }
    }

    /// 3x3 stride-1 variant used throughout the segmentation networks.
    pub fn same3<R: Rng>(name: &str, in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        ConvBnRelu::new(name, |n, r| Conv2d::same3(n, in_ch, out_ch, r), rng)
    }

    pub fn in_channels(&self) -> usize {
        self.conv.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.bn.forward(&self.conv.forward(x)?)?;
        relu_inplace(&mut y);
        Ok(y)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, ConvBnReluCache)> {
        let z = self.conv.forward(x)?;
        let (mut y, bn) = self.bn.forward_train(&z)?;
        relu_inplace(&mut y);
        let cache = ConvBnReluCache {
            input: x.clone(),
            bn,
            output: y.clone(),
        };
        Ok((y, cache))
    }

    pub fn backward(&mut self, cache: &ConvBnReluCache, dy: &Tensor) -> Result<Tensor> {
        let dz = relu_backward(&cache.output, dy);
        let dz = self.bn.backward(&cache.bn, &dz)?;
        self.conv.backward(&cache.input, &dz)
    }
}

impl Module for ConvBnRelu {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.conv.params();
        p.extend(self.bn.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.conv.params_mut();
        p.extend(self.bn.params_mut());
        p
    }
}
