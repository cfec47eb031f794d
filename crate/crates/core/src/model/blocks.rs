use rand::Rng;

use crate::error::{shape_err, Result};
use crate::nn::{
    max_pool2, max_pool2_backward, upsample2_bilinear, upsample2_bilinear_backward, ConvBnRelu,
    ConvBnReluCache, Module, Param, PoolIndices,
};
use crate::tensor::Tensor;

/// 3x3 conv -> BN -> ReLU at full resolution, then 2x2 max pooling. An
/// optional junction tensor is channel-concatenated onto the features before
/// pooling.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub stage: ConvBnRelu,
}

pub struct EncoderCache {
    stage: ConvBnReluCache,
    pool: PoolIndices,
    own_channels: usize,
    has_junction: bool,
}

fn check_even(x: &Tensor) -> Result<()> {
    if !x.h().is_multiple_of(2) || !x.w().is_multiple_of(2) {
        return shape_err(format!("encoder block needs even spatial dims, got {:?}", x.shape()));
    }
    Ok(())
}

fn attach(f: Tensor, junction: Option<&Tensor>) -> Result<Tensor> {
    match junction {
        None => Ok(f),
        Some(j) => Tensor::concat_channels(&f, j),
    }
}

impl EncoderBlock {
    pub fn new<R: Rng>(name: &str, in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        EncoderBlock {
            stage: ConvBnRelu::same3(name, in_ch, out_ch, rng),
        }
    }

    /// `(features, pooled)` in inference mode.
    pub fn forward(&self, x: &Tensor, junction: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        check_even(x)?;
        let f = attach(self.stage.forward(x)?, junction)?;
        let (p, _) = max_pool2(&f)?;
        Ok((f, p))
    }

    pub fn forward_train(
        &mut self,
        x: &Tensor,
        junction: Option<&Tensor>,
    ) -> Result<(Tensor, Tensor, EncoderCache)> {
        check_even(x)?;
        let (f, stage) = self.stage.forward_train(x)?;
        let own_channels = f.c();
        let f = attach(f, junction)?;
        let (p, pool) = max_pool2(&f)?;
        let cache = EncoderCache {
            stage,
            pool,
            own_channels,
            has_junction: junction.is_some(),
        };
        Ok((f, p, cache))
    }

    /// `(d_input, d_junction)` from gradients on both outputs.
    pub fn backward(
        &mut self,
        cache: &EncoderCache,
        d_features: Option<&Tensor>,
        d_pooled: &Tensor,
    ) -> Result<(Tensor, Option<Tensor>)> {
        let mut df = max_pool2_backward(&cache.pool, d_pooled);
        if let Some(d) = d_features {
            df.add_assign(d);
        }
        let (own, dj) = if cache.has_junction {
            let (a, b) = df.split_channels(cache.own_channels);
            (a, Some(b))
        } else {
            (df, None)
        };
        Ok((self.stage.backward(&cache.stage, &own)?, dj))
    }
}

/// Bilinear x2 upsampling, optional channel concat with a skip tensor, then
/// 3x3 conv -> BN -> ReLU.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub stage: ConvBnRelu,
}

pub struct DecoderCache {
    stage: ConvBnReluCache,
    up_channels: usize,
    has_skip: bool,
}

fn join(x: &Tensor, skip: Option<&Tensor>) -> Result<Tensor> {
    let up = upsample2_bilinear(x);
    match skip {
        None => Ok(up),
        Some(s) => {
            if s.n() != up.n() || s.h() != up.h() || s.w() != up.w() {
                return shape_err(format!(
                    "skip {:?} does not match upsampled input {:?}",
                    s.shape(),
                    up.shape()
                ));
            }
            Tensor::concat_channels(&up, s)
        }
    }
}

impl DecoderBlock {
    pub fn new<R: Rng>(name: &str, in_ch: usize, skip_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        DecoderBlock {
            stage: ConvBnRelu::same3(name, in_ch + skip_ch, out_ch, rng),
        }
    }

    pub fn forward(&self, x: &Tensor, skip: Option<&Tensor>) -> Result<Tensor> {
        let j = join(x, skip)?;
        if j.c() != self.stage.in_channels() {
            return shape_err(format!(
                "decoder block expects {} input+skip channels, got {}",
                self.stage.in_channels(),
                j.c()
            ));
        }
        self.stage.forward(&j)
    }

    pub fn forward_train(&mut self, x: &Tensor, skip: Option<&Tensor>) -> Result<(Tensor, DecoderCache)> {
        let j = join(x, skip)?;
        if j.c() != self.stage.in_channels() {
            return shape_err(format!(
                "decoder block expects {} input+skip channels, got {}",
                self.stage.in_channels(),
                j.c()
            ));
        }
        let (y, stage) = self.stage.forward_train(&j)?;
        Ok((
            y,
            DecoderCache {
                stage,
                up_channels: x.c(),
                has_skip: skip.is_some(),
            },
        ))
    }

    /// `(d_input, d_skip)`.
    pub fn backward(&mut self, cache: &DecoderCache, dy: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let dj = self.stage.backward(&cache.stage, dy)?;
        if cache.has_skip {
            let (du, ds) = dj.split_channels(cache.up_channels);
            Ok((upsample2_bilinear_backward(&du)?, Some(ds)))
        } else {
            Ok((upsample2_bilinear_backward(&dj)?, None))
        }
    }
}

impl Module for EncoderBlock {
    fn params(&self) -> Vec<&Param> {
        self.stage.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.stage.params_mut()
    }
}

impl Module for DecoderBlock {
    fn params(&self) -> Vec<&Param> {
        self.stage.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.stage.params_mut()
    }
}
