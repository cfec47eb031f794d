use super::blocks::{DecoderBlock, DecoderCache, EncoderBlock, EncoderCache};
use crate::error::Result;
use crate::nn::{ConvBnRelu, ConvBnReluCache, Module, Param};
use crate::tensor::Tensor;

/// Four encoder blocks, a bottleneck stage and four decoder blocks stored
/// deepest first (D4, D3, D2, D1).
#[derive(Clone, Debug)]
pub(crate) struct Trunk {
    pub enc: Vec<EncoderBlock>,
    pub bottleneck: ConvBnRelu,
    pub dec: Vec<DecoderBlock>,
}

#[derive(Default)]
pub(crate) struct TrunkCache {
    pub enc: Vec<EncoderCache>,
    pub bottleneck: Option<ConvBnReluCache>,
    pub dec: Vec<DecoderCache>,
}

/// Runs trunk blocks either in inference mode or recording training caches,
/// so each branch's wiring is written once.
pub(crate) trait Exec {
    fn enc(&mut self, i: usize, x: &Tensor, junction: Option<&Tensor>) -> Result<(Tensor, Tensor)>;
    fn bottleneck(&mut self, x: &Tensor) -> Result<Tensor>;
    fn dec(&mut self, i: usize, x: &Tensor, skip: Option<&Tensor>) -> Result<Tensor>;
}

pub(crate) struct Eval<'a>(pub &'a Trunk);

impl Exec for Eval<'_> {
    fn enc(&mut self, i: usize, x: &Tensor, junction: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        self.0.enc[i].forward(x, junction)
    }
    fn bottleneck(&mut self, x: &Tensor) -> Result<Tensor> {
        self.0.bottleneck.forward(x)
    }
    fn dec(&mut self, i: usize, x: &Tensor, skip: Option<&Tensor>) -> Result<Tensor> {
        self.0.dec[i].forward(x, skip)
    }
}

pub(crate) struct Train<'a> {
    pub trunk: &'a mut Trunk,
    pub cache: TrunkCache,
}

impl Exec for Train<'_> {
    fn enc(&mut self, i: usize, x: &Tensor, junction: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let (f, p, c) = self.trunk.enc[i].forward_train(x, junction)?;
        self.cache.enc.push(c);
        Ok((f, p))
    }
    fn bottleneck(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, c) = self.trunk.bottleneck.forward_train(x)?;
        self.cache.bottleneck = Some(c);
        Ok(y)
    }
    fn dec(&mut self, i: usize, x: &Tensor, skip: Option<&Tensor>) -> Result<Tensor> {
        let (y, c) = self.trunk.dec[i].forward_train(x, skip)?;
        self.cache.dec.push(c);
        Ok(y)
    }
}

impl Module for Trunk {
    fn params(&self) -> Vec<&Param> {
        let mut p = Vec::new();
        for e in &self.enc {
            p.extend(e.params());
        }
        p.extend(self.bottleneck.params());
        for d in &self.dec {
            p.extend(d.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = Vec::new();
        for e in &mut self.enc {
            p.extend(e.params_mut());
        }
        p.extend(self.bottleneck.params_mut());
        for d in &mut self.dec {
            p.extend(d.params_mut());
        }
        p
    }
}
