use super::param::{Module, Param};
use super::Mode;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

const EPS: f64 = 1e-5;
const MOMENTUM: f32 = 0.1;

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
}

pub struct BatchNormCache {
    x_hat: Tensor,
    inv_std: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::filled(format!("{name}.gamma"), vec![channels], 1.0),
            beta: Param::filled(format!("{name}.beta"), vec![channels], 0.0),
            running_mean: Param::buffer(format!("{name}.running_mean"), vec![channels], 0.0),
            running_var: Param::buffer(format!("{name}.running_var"), vec![channels], 1.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.c() != self.channels() {
            return shape_err(format!(
                "{}: expected {} channels, got {}",
                self.gamma.name,
                self.channels(),
                x.c()
            ));
        }
        Ok(())
    }

    /// Inference: normalizes with the running statistics.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut y = x.clone();
        let [n, c, h, w] = x.shape();
        let hw = h * w;
        for i in 0..n {
            for ch in 0..c {
                let inv = 1.0 / (self.running_var.value[ch] as f64 + EPS).sqrt();
                let scale = (self.gamma.value[ch] as f64 * inv) as f32;
                let shift = self.beta.value[ch] - self.running_mean.value[ch] * scale;
                let start = (i * c + ch) * hw;
                for v in &mut y.data_mut()[start..start + hw] {
                    *v = *v * scale + shift;
                }
            }
        }
        Ok(y)
    }

    pub fn forward_mode(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Option<BatchNormCache>)> {
        match mode {
            Mode::Eval => Ok((self.forward(x)?, None)),
            Mode::Train => {
                let (y, cache) = self.forward_train(x)?;
                Ok((y, Some(cache)))
            }
        }
    }

    /// Training: batch statistics, running estimates updated in place.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, BatchNormCache)> {
        self.check(x)?;
        let [n, c, h, w] = x.shape();
        let hw = h * w;
        let count = (n * hw) as f64;
        let mut x_hat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let mut inv_std = vec![0.0f32; c];
        for (ch, inv_slot) in inv_std.iter_mut().enumerate() {
            let planes = (0..n).map(|i| x.plane(i, ch));
            let mut sum = 0.0f64;
            for p in planes.clone() {
                sum += p.iter().map(|&v| v as f64).sum::<f64>();
            }
            let mean = sum / count;
            let mut sq = 0.0f64;
            for p in planes {
                sq += p.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>();
            }
            let var = sq / count;
            let inv = 1.0 / (var + EPS).sqrt();
            *inv_slot = inv as f32;
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            for i in 0..n {
                let start = (i * c + ch) * hw;
                let src = &x.data()[start..start + hw];
                let xh = &mut x_hat.data_mut()[start..start + hw];
                for (d, &s) in xh.iter_mut().zip(src) {
                    *d = ((s as f64 - mean) * inv) as f32;
                }
                let out = &mut y.data_mut()[start..start + hw];
                for (o, &v) in out.iter_mut().zip(&x_hat.data()[start..start + hw]) {
                    *o = g * v + b;
                }
            }
            let unbiased = if count > 1.0 { sq / (count - 1.0) } else { var };
            let rm = &mut self.running_mean.value[ch];
            *rm = (1.0 - MOMENTUM) * *rm + MOMENTUM * mean as f32;
            let rv = &mut self.running_var.value[ch];
            *rv = (1.0 - MOMENTUM) * *rv + MOMENTUM * unbiased as f32;
        }
        Ok((y, BatchNormCache { x_hat, inv_std }))
    }

    pub fn backward(&mut self, cache: &BatchNormCache, dy: &Tensor) -> Result<Tensor> {
        if dy.shape() != cache.x_hat.shape() {
            return shape_err(format!("{}: gradient shape mismatch", self.gamma.name));
        }
        let [n, c, h, w] = dy.shape();
        let hw = h * w;
        let count = (n * hw) as f64;
        let mut dx = Tensor::zeros(dy.shape());
        for ch in 0..c {
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xh = 0.0f64;
            for i in 0..n {
                let start = (i * c + ch) * hw;
                let d = &dy.data()[start..start + hw];
                let xh = &cache.x_hat.data()[start..start + hw];
                for (&a, &b) in d.iter().zip(xh) {
                    sum_dy += a as f64;
                    sum_dy_xh += (a * b) as f64;
                }
            }
            self.gamma.grad[ch] += sum_dy_xh as f32;
            self.beta.grad[ch] += sum_dy as f32;
            let k = self.gamma.value[ch] as f64 * cache.inv_std[ch] as f64 / count;
            let (mean_dy, mean_dy_xh) = (sum_dy, sum_dy_xh);
            for i in 0..n {
                let start = (i * c + ch) * hw;
                let d = &dy.data()[start..start + hw];
                let xh = &cache.x_hat.data()[start..start + hw];
                let out = &mut dx.data_mut()[start..start + hw];
                for ((o, &a), &b) in out.iter_mut().zip(d).zip(xh) {
                    *o = (k * (count * a as f64 - mean_dy - b as f64 * mean_dy_xh)) as f32;
                }
            }
        }
        Ok(dx)
    }
}

impl Module for BatchNorm2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }
}
