use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{pretext_loss_grad, total_loss, weighted_bce, weighted_bce_logits};
use super::{EarlyStopping, EpochLog, Verdict};
use crate::error::{invalid, Error, Result};
use crate::model::{CoFcn, CoFcnConfig, UNet};
use crate::nn::{Adam, Module};
use crate::patches::{PatchRef, PATCH_SIZE};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub lesion_weight: f64,
    pub pretext_weight: f64,
    pub k_shots: usize,
    pub patience: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub max_epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            lesion_weight: 4.0,
            pretext_weight: 0.2,
            k_shots: 8,
            patience: 3,
            train_fraction: 0.75,
            seed: 0,
            max_epochs: 50,
            batch_size: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.lesion_weight > 0.0 && self.pretext_weight > 0.0) {
            return invalid("learning rate and loss weights must be positive");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return invalid(format!("train_fraction {} outside (0, 1)", self.train_fraction));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return invalid("batch_size and max_epochs must be positive");
        }
        Ok(())
    }
}

/// Deduplicated patch pixels (CHW) and masks (HW, 0/1).
#[derive(Clone, Debug, Default)]
pub struct PatchPool {
    pixels: Vec<Vec<f32>>,
    masks: Vec<Vec<f32>>,
    index: HashMap<PatchRef, usize>,
}

impl PatchPool {
    pub fn new() -> Self {
        PatchPool::default()
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn get(&self, r: &PatchRef) -> Option<usize> {
        self.index.get(r).copied()
    }

    /// Inserts a patch once; later inserts of the same ref return the first id.
    pub fn insert(&mut self, r: PatchRef, pixels: Vec<f32>, mask: Vec<f32>) -> Result<usize> {
        if let Some(&i) = self.index.get(&r) {
            return Ok(i);
        }
        if pixels.len() != 3 * PATCH_SIZE * PATCH_SIZE || mask.len() != PATCH_SIZE * PATCH_SIZE {
            return invalid(format!("patch {r} has wrong pixel or mask size"));
        }
        let i = self.pixels.len();
        self.pixels.push(pixels);
        self.masks.push(mask);
        self.index.insert(r, i);
        Ok(i)
    }

    pub fn pixels(&self, i: usize) -> &[f32] {
        &self.pixels[i]
    }

    pub fn mask(&self, i: usize) -> &[f32] {
        &self.masks[i]
    }
}

/// One query with its ordered support shots and prevalence target.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub query: usize,
    pub shots: Vec<usize>,
    pub pi: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainSet {
    pub pool: PatchPool,
    pub samples: Vec<TrainSample>,
}

pub(crate) struct Batch {
    pub query: Tensor,
    pub support: Option<Tensor>,
    pub masks: Vec<Vec<f32>>,
    pub pi: Vec<f64>,
}

impl TrainSet {
    pub(crate) fn batch(&self, idx: &[usize], k: usize) -> Result<Batch> {
        let plane = 3 * PATCH_SIZE * PATCH_SIZE;
        let samples: Vec<&TrainSample> = idx.iter().map(|&i| &self.samples[i]).collect();
        let views: Vec<&[f32]> = samples.iter().map(|s| self.pool.pixels(s.query)).collect();
        let query = Tensor::stack(&views, [3, PATCH_SIZE, PATCH_SIZE])?;
        let support = if k > 0 {
            let mut data = Vec::with_capacity(samples.len() * k * plane);
            for s in &samples {
                if s.shots.len() != k {
                    return invalid(format!("sample has {} shots, expected {k}", s.shots.len()));
                }
                for &j in &s.shots {
                    data.extend_from_slice(self.pool.pixels(j));
                }
            }
            Some(Tensor::from_vec([samples.len(), 3 * k, PATCH_SIZE, PATCH_SIZE], data)?)
        } else {
            None
        };
        Ok(Batch {
            query,
            support,
            masks: samples.iter().map(|s| self.pool.mask(s.query).to_vec()).collect(),
            pi: samples.iter().map(|s| s.pi).collect(),
        })
    }
}

/// A network the training loop can drive.
pub(crate) trait SegNet: Module + Clone {
    fn shots(&self) -> usize;
    /// Forward + backward on one batch; returns the per-sample losses.
    fn train_batch(&mut self, b: &Batch, cfg: &TrainConfig) -> Result<Vec<f64>>;
    /// Inference-mode per-sample losses.
    fn eval_batch(&self, b: &Batch, cfg: &TrainConfig) -> Result<Vec<f64>>;
}

fn pixel_grads(logit: &Tensor, masks: &[Vec<f32>], w_l: f64, scale: f64) -> Result<(Vec<f64>, Tensor)> {
    let mut losses = Vec::with_capacity(masks.len());
    let mut d = Tensor::zeros(logit.shape());
    for (i, m) in masks.iter().enumerate() {
        let (l, g) = weighted_bce_logits(logit.sample(i), m, w_l)?;
        losses.push(l);
        for (o, v) in d.sample_mut(i).iter_mut().zip(g) {
            *o = (v * scale) as f32;
        }
    }
    Ok((losses, d))
}

impl SegNet for CoFcn {
    fn shots(&self) -> usize {
        self.config().k_shots
    }

    fn train_batch(&mut self, b: &Batch, cfg: &TrainConfig) -> Result<Vec<f64>> {
        let support = b.support.as_ref().expect("co-FCN batch without support");
        let (out, cache) = self.forward_train(&b.query, support)?;
        let scale = 1.0 / b.masks.len() as f64;
        let (mut losses, d_logit) = pixel_grads(&out.logit, &b.masks, cfg.lesion_weight, scale)?;
        let cond_map = out.cond_map.expect("co-FCN cond map");
        let k = self.shots();
        let mut d_cond = Tensor::zeros(cond_map.shape());
        for (i, loss) in losses.iter_mut().enumerate() {
            let (l, g) = pretext_loss_grad(cond_map.sample(i), k, b.pi[i])?;
            *loss += cfg.pretext_weight * l;
            let g = (g * cfg.pretext_weight * scale) as f32;
            d_cond.sample_mut(i).iter_mut().for_each(|v| *v = g);
        }
        self.backward(&cache, &d_logit, &d_cond)?;
        Ok(losses)
    }

    fn eval_batch(&self, b: &Batch, cfg: &TrainConfig) -> Result<Vec<f64>> {
        let support = b.support.as_ref().expect("co-FCN batch without support");
        let out = self.forward(&b.query, support)?;
        (0..b.masks.len())
            .map(|i| {
                let t = total_loss(
                    out.seg_prob.sample(i),
                    &b.masks[i],
                    out.cond_map.sample(i),
                    self.shots(),
                    b.pi[i],
                    cfg.lesion_weight,
                    cfg.pretext_weight,
                )?;
                Ok(t.total)
            })
            .collect()
    }
}

impl SegNet for UNet {
    fn shots(&self) -> usize {
        0
    }

    fn train_batch(&mut self, b: &Batch, cfg: &TrainConfig) -> Result<Vec<f64>> {
        let (out, cache) = self.forward_train(&b.query)?;
        let scale = 1.0 / b.masks.len() as f64;
        let (losses, d_logit) = pixel_grads(&out.logit, &b.masks, cfg.lesion_weight, scale)?;
        self.backward(&cache, &d_logit)?;
        Ok(losses)
    }

    fn eval_batch(&self, b: &Batch, cfg: &TrainConfig) -> Result<Vec<f64>> {
        let prob = self.forward(&b.query)?;
        (0..b.masks.len())
            .map(|i| weighted_bce(prob.sample(i), &b.masks[i], cfg.lesion_weight))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainedNetwork<M> {
    pub model: M,
    pub history: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    /// Inference-mode loss of the returned weights on the training split.
    pub final_train_loss: f64,
}

fn mean_eval<M: SegNet>(model: &M, data: &TrainSet, idx: &[usize], cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for chunk in idx.chunks(cfg.batch_size) {
        let b = data.batch(chunk, model.shots())?;
        total += model.eval_batch(&b, cfg)?.iter().sum::<f64>();
    }
    Ok(total / idx.len() as f64)
}

fn run<M: SegNet>(mut model: M, data: &TrainSet, cfg: &TrainConfig) -> Result<TrainedNetwork<M>> {
    cfg.validate()?;
    let n = data.samples.len();
    if n < 2 {
        return Err(Error::NotEnoughData(format!(
            "training needs at least 2 samples for a train/validation split, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = ((cfg.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let (train_idx, val_idx) = order.split_at(n_train);
    let mut train_idx = train_idx.to_vec();
    let val_idx = val_idx.to_vec();

    let mut adam = Adam::new(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();
    let mut history = Vec::new();
    model.zero_grad();
    for epoch in 1..=cfg.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let b = data.batch(chunk, model.shots())?;
            sum += model.train_batch(&b, cfg)?.iter().sum::<f64>();
            adam.step(model.params_mut(), 1.0);
        }
        let train_loss = sum / train_idx.len() as f64;
        let val_loss = mean_eval(&model, data, &val_idx, cfg)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return invalid(format!("loss diverged at epoch {epoch}"));
        }
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        history.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr: cfg.learning_rate,
        });
        match stopper.observe(val_loss) {
            Verdict::Improved => best = model.clone(),
            Verdict::Continue => {}
            Verdict::Stop => {
                log::info!("no improvement for {} epochs, stopping", cfg.patience);
                break;
            }
        }
    }
    let final_train_loss = mean_eval(&best, data, &train_idx, cfg)?;
    Ok(TrainedNetwork {
        model: best,
        history,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best(),
        final_train_loss,
    })
}

/// Trains a co-FCN on (query, support) samples; every sample must carry
/// exactly `k_shots` shots.
pub fn train_cofcn(model_cfg: &CoFcnConfig, data: &TrainSet, cfg: &TrainConfig) -> Result<TrainedNetwork<CoFcn>> {
    if model_cfg.k_shots != cfg.k_shots {
        return invalid(format!(
            "model built for k = {} but training asks for k = {}",
            model_cfg.k_shots, cfg.k_shots
        ));
    }
    run(CoFcn::new(model_cfg.clone())?, data, cfg)
}

/// Trains the baseline U-Net; shots and prevalence targets are ignored.
pub fn train_unet(model_cfg: &CoFcnConfig, data: &TrainSet, cfg: &TrainConfig) -> Result<TrainedNetwork<UNet>> {
    run(UNet::new(model_cfg.clone())?, data, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patches::{generate_synthetic_slide, image_patch, LesionSpec};

    fn small_model(k: usize) -> CoFcnConfig {
        CoFcnConfig {
            k_shots: k,
            encoder_channels: [4, 8, 8, 8],
            decoder_channels: [4, 4, 8, 8],
            seed: 1,
        }
    }

    /// 32 patches from one synthetic slide; shots are the next two patches.
    fn synthetic_set(n: usize, k: usize) -> TrainSet {
        let slide = generate_synthetic_slide(5, (768, 768), &LesionSpec::default()).unwrap();
        let mut set = TrainSet::default();
        for i in 0..n {
            let origin = ((i % 8) as u32 * 64 + 128, (i / 8) as u32 * 64 + 128);
            let r = PatchRef {
                slide_id: "s".into(),
                grid_x: origin.0,
                grid_y: origin.1,
            };
            let mask = slide
                .mask
                .crop((origin.0 as usize, origin.1 as usize), PATCH_SIZE)
                .unwrap()
                .data
                .iter()
                .map(|&v| v as f32)
                .collect();
            set.pool
                .insert(r, image_patch(&slide.image, origin, PATCH_SIZE).unwrap(), mask)
                .unwrap();
        }
        for i in 0..n {
            let frac = set.pool.mask(i).iter().sum::<f32>() as f64 / (PATCH_SIZE * PATCH_SIZE) as f64;
            set.samples.push(TrainSample {
                query: i,
                shots: (1..=k).map(|j| (i + j) % n).collect(),
                pi: if frac > 0.5 { 0.9 } else { 0.1 },
            });
        }
        set
    }

    fn quick(k: usize) -> TrainConfig {
        TrainConfig {
            k_shots: k,
            max_epochs: 5,
            patience: 10,
            learning_rate: 0.003,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn cofcn_loss_falls_over_first_epochs() {
        let set = synthetic_set(32, 2);
        let t = train_cofcn(&small_model(2), &set, &quick(2)).unwrap();
        let l: Vec<f64> = t.history.iter().map(|h| h.train_loss).collect();
        assert_eq!(l.len(), 5);
        // two-epoch moving average
        let smooth: Vec<f64> = l.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
        for w in smooth.windows(2) {
            assert!(w[1] < w[0], "{l:?}");
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let set = synthetic_set(8, 1);
        let cfg = TrainConfig {
            max_epochs: 2,
            ..quick(1)
        };
        let a = train_cofcn(&small_model(1), &set, &cfg).unwrap();
        let b = train_cofcn(&small_model(1), &set, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert!((a.final_train_loss - b.final_train_loss).abs() < 1e-6);
    }

    #[test]
    fn unet_trains_without_shots() {
        let mut set = synthetic_set(8, 0);
        set.samples.iter_mut().for_each(|s| s.pi = 0.0);
        let cfg = TrainConfig {
            max_epochs: 2,
            ..quick(1)
        };
        let t = train_unet(&small_model(1), &set, &cfg).unwrap();
        assert_eq!(t.history.len(), 2);
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        let set = synthetic_set(1, 1);
        assert!(train_cofcn(&small_model(1), &set, &quick(1)).is_err());
        let set = synthetic_set(4, 1);
        assert!(train_cofcn(&small_model(2), &set, &quick(1)).is_err());
        let bad = TrainConfig {
            lesion_weight: 0.0,
            ..quick(1)
        };
        assert!(train_cofcn(&small_model(1), &set, &bad).is_err());
    }
}
