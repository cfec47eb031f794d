use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LATENT_DIM;
use crate::error::{invalid, shape_err, Error, Result};
use crate::nn::state::{read_checkpoint, read_meta, write_checkpoint};
use crate::nn::{
    upsample2_bilinear, upsample2_bilinear_backward, Adam, Conv2d, ConvBnRelu, ConvBnReluCache,
    Module, Param,
};
use crate::patches::PATCH_SIZE;
use crate::tensor::Tensor;
use crate::training::{EarlyStopping, EpochLog, Verdict};

const ENCODER_WIDTH: usize = 16;
const STAGES: usize = 4;
pub const AUTOENCODER_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub latent_channels: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub early_stop_patience: usize,
    pub train_fraction: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            latent_channels: LATENT_DIM,
            learning_rate: 0.004,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            early_stop_patience: 3,
            train_fraction: 0.8,
            max_epochs: 50,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_channels != LATENT_DIM {
            return invalid(format!(
                "latent_channels must be {LATENT_DIM}, got {}",
                self.latent_channels
            ));
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

/// Convolutional autoencoder: four stride-2 conv/BN/ReLU stages
/// (3 -> 16 -> 16 -> 16 -> 8 channels, 128 -> 8 px) and a mirrored decoder of
/// bilinear x2 upsampling + conv/BN/ReLU, closed by a 3x3 conv and a sigmoid.
#[derive(Clone, Debug)]
pub struct Autoencoder {
    config: AutoencoderConfig,
    encoder: Vec<ConvBnRelu>,
    decoder: Vec<ConvBnRelu>,
    output: Conv2d,
}

pub struct AutoencoderCache {
    encoder: Vec<ConvBnReluCache>,
    decoder: Vec<ConvBnReluCache>,
    output_input: Tensor,
    reconstruction: Tensor,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AutoencoderMeta {
    pub kind: String,
    pub schema_version: u32,
    pub center_id: u8,
    pub config: AutoencoderConfig,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
}

impl Autoencoder {
    pub fn new(config: AutoencoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut widths = vec![3];
        widths.extend(std::iter::repeat_n(ENCODER_WIDTH, STAGES - 1));
        widths.push(config.latent_channels);
        let encoder = (0..STAGES)
            .map(|i| {
                let (cin, cout) = (widths[i], widths[i + 1]);
                ConvBnRelu::new(
                    &format!("ae.enc{i}"),
                    |n, r| Conv2d::new(n, cin, cout, 3, 2, 1, r),
                    &mut rng,
                )
            })
            .collect();
        let decoder = (0..STAGES)
            .map(|i| {
                let cin = if i == 0 {
                    config.latent_channels
                } else {
                    ENCODER_WIDTH
                };
                ConvBnRelu::same3(&format!("ae.dec{i}"), cin, ENCODER_WIDTH, &mut rng)
            })
            .collect();
        let output = Conv2d::same3("ae.out", ENCODER_WIDTH, 3, &mut rng);
        Ok(Autoencoder {
            config,
            encoder,
            decoder,
            output,
        })
    }

    pub fn config(&self) -> &AutoencoderConfig {
        &self.config
    }

    fn check_input(x: &Tensor) -> Result<()> {
        let [_, c, h, w] = x.shape();
        if c != 3 || h != PATCH_SIZE || w != PATCH_SIZE {
            return shape_err(format!(
                "autoencoder expects Nx3x{PATCH_SIZE}x{PATCH_SIZE}, got {:?}",
                x.shape()
            ));
        }
        Ok(())
    }

    /// Latent map `N x 8 x 8 x 8` in inference mode.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        Self::check_input(x)?;
        let mut h = x.clone();
        for stage in &self.encoder {
            h = stage.forward(&h)?;
        }
        Ok(h)
    }

    pub fn decode(&self, latent: &Tensor) -> Result<Tensor> {
        let mut h = latent.clone();
        for stage in &self.decoder {
            h = stage.forward(&upsample2_bilinear(&h))?;
        }
        let mut out = self.output.forward(&h)?;
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = crate::nn::sigmoid(*v as f64) as f32);
        Ok(out)
    }

    /// Inference-mode `(reconstruction, latent)`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let latent = self.encode(x)?;
        Ok((self.decode(&latent)?, latent))
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<AutoencoderCache> {
        Self::check_input(x)?;
        let mut encoder = Vec::with_capacity(STAGES);
        let mut h = x.clone();
        for stage in &mut self.encoder {
            let (y, c) = stage.forward_train(&h)?;
            encoder.push(c);
            h = y;
        }
        let mut decoder = Vec::with_capacity(STAGES);
        for stage in &mut self.decoder {
            let (y, c) = stage.forward_train(&upsample2_bilinear(&h))?;
            decoder.push(c);
            h = y;
        }
        let mut reconstruction = self.output.forward(&h)?;
        reconstruction
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = crate::nn::sigmoid(*v as f64) as f32);
        Ok(AutoencoderCache {
            encoder,
            decoder,
            output_input: h,
            reconstruction,
        })
    }

    pub fn backward(&mut self, cache: &AutoencoderCache, d_recon: &Tensor) -> Result<()> {
        let mut dz = d_recon.clone();
        for (g, &r) in dz.data_mut().iter_mut().zip(cache.reconstruction.data()) {
            *g *= r * (1.0 - r);
        }
        let mut dh = self.output.backward(&cache.output_input, &dz)?;
        for (stage, c) in self.decoder.iter_mut().zip(&cache.decoder).rev() {
            let du = stage.backward(c, &dh)?;
            dh = upsample2_bilinear_backward(&du)?;
        }
        for (stage, c) in self.encoder.iter_mut().zip(&cache.encoder).rev() {
            dh = stage.backward(c, &dh)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, meta: &AutoencoderMeta) -> Result<()> {
        write_checkpoint(BufWriter::new(File::create(path)?), meta, &self.params())
    }

    pub fn load(path: &Path) -> Result<(Self, AutoencoderMeta)> {
        let meta: AutoencoderMeta = read_meta(BufReader::new(File::open(path)?))?;
        if meta.kind != "autoencoder" || meta.schema_version != AUTOENCODER_SCHEMA {
            return Err(Error::Checkpoint(format!(
                "{}: expected autoencoder schema {AUTOENCODER_SCHEMA}, found {} v{}",
                path.display(),
                meta.kind,
                meta.schema_version
            )));
        }
        let mut model = Autoencoder::new(meta.config.clone())?;
        read_checkpoint::<_, AutoencoderMeta>(BufReader::new(File::open(path)?), model.params_mut())?;
        Ok((model, meta))
    }
}

impl Module for Autoencoder {
    fn params(&self) -> Vec<&Param> {
        let mut p: Vec<&Param> = Vec::new();
        for s in self.encoder.iter().chain(&self.decoder) {
            p.extend(s.params());
        }
        p.extend(self.output.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = Vec::new();
        for s in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            p.extend(s.params_mut());
        }
        p.extend(self.output.params_mut());
        p
    }
}

/// Mean squared error and its gradient.
pub fn reconstruction_loss(recon: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if recon.shape() != target.shape() {
        return shape_err(format!(
            "reconstruction {:?} vs input {:?}",
            recon.shape(),
            target.shape()
        ));
    }
    let n = recon.len() as f64;
    let mut grad = Tensor::zeros(recon.shape());
    let mut sum = 0.0f64;
    for ((g, &r), &t) in grad.data_mut().iter_mut().zip(recon.data()).zip(target.data()) {
        let d = r as f64 - t as f64;
        sum += d * d;
        *g = (2.0 * d / n) as f32;
    }
    Ok((sum / n, grad))
}

pub struct TrainedAutoencoder {
    pub model: Autoencoder,
    pub history: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
}

fn batch(patches: &[Vec<f32>], idx: &[usize]) -> Result<Tensor> {
    let views: Vec<&[f32]> = idx.iter().map(|&i| patches[i].as_slice()).collect();
    Tensor::stack(&views, [3, PATCH_SIZE, PATCH_SIZE])
}

fn eval_loss(model: &Autoencoder, patches: &[Vec<f32>], idx: &[usize], bs: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in idx.chunks(bs) {
        let x = batch(patches, chunk)?;
        let (recon, _) = model.forward(&x)?;
        total += reconstruction_loss(&recon, &x)?.0 * chunk.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

/// Trains on a seeded `train_fraction` split of `patches` (CHW, `[0, 1]`),
/// optionally warm-started from `init`, and returns the weights with the
/// lowest validation loss.
pub fn train_autoencoder(
    patches: &[Vec<f32>],
    config: &AutoencoderConfig,
    init: Option<&Autoencoder>,
) -> Result<TrainedAutoencoder> {
    config.validate()?;
    if patches.len() < 2 {
        return Err(Error::NotEnoughData(format!(
            "autoencoder training needs at least 2 patches, got {}",
            patches.len()
        )));
    }
    let mut model = match init {
        Some(m) => {
            let mut m = m.clone();
            m.config = config.clone();
            m
        }
        None => Autoencoder::new(config.clone())?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_edae);
    let mut order: Vec<usize> = (0..patches.len()).collect();
    order.shuffle(&mut rng);
    let n_train = ((config.train_fraction * patches.len() as f64).round() as usize)
        .clamp(1, patches.len() - 1);
    let (train_idx, val_idx) = order.split_at(n_train);
    let mut train_idx = train_idx.to_vec();

    let mut adam = Adam::new(config.learning_rate, config.adam_beta1, config.adam_beta2);
    let mut stopper = EarlyStopping::new(config.early_stop_patience);
    let mut best = model.clone();
    let mut history = Vec::new();
    for epoch in 1..=config.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut train_total = 0.0;
        for chunk in train_idx.chunks(config.batch_size) {
            let x = batch(patches, chunk)?;
            let cache = model.forward_train(&x)?;
            let (loss, grad) = reconstruction_loss(&cache.reconstruction, &x)?;
            model.backward(&cache, &grad)?;
            adam.step(model.params_mut(), 1.0);
            train_total += loss * chunk.len() as f64;
        }
        let val_loss = eval_loss(&model, patches, val_idx, config.batch_size)?;
        let train_loss = train_total / train_idx.len() as f64;
        log::debug!("autoencoder epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        history.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr: config.learning_rate,
        });
        match stopper.observe(val_loss) {
            Verdict::Improved => best = model.clone(),
            Verdict::Continue => {}
            Verdict::Stop => break,
        }
    }
    Ok(TrainedAutoencoder {
        model: best,
        history,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patches::{generate_synthetic_slide, image_patch, LesionSpec};

    fn synthetic_patches(n: usize) -> Vec<Vec<f32>> {
        let slide = generate_synthetic_slide(11, (512, 512), &LesionSpec::default()).unwrap();
        (0..n)
            .map(|i| {
                let origin = (64 + 32 * (i % 4) as u32, 64 + 32 * (i / 4) as u32);
                image_patch(&slide.image, origin, PATCH_SIZE).unwrap()
            })
            .collect()
    }

    fn quick_config(seed: u64) -> AutoencoderConfig {
        AutoencoderConfig {
            max_epochs: 3,
            seed,
            ..AutoencoderConfig::default()
        }
    }

    #[test]
    fn shapes_and_latent_channels() {
        let ae = Autoencoder::new(quick_config(0)).unwrap();
        let p = synthetic_patches(2);
        let x = batch(&p, &[0, 1]).unwrap();
        let (recon, latent) = ae.forward(&x).unwrap();
        assert_eq!(recon.shape(), [2, 3, 128, 128]);
        assert_eq!(latent.c(), 8);
        assert!(recon.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let (again, _) = ae.forward(&x).unwrap();
        assert_eq!(recon, again);
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let ae = Autoencoder::new(quick_config(0)).unwrap();
        assert!(ae.forward(&Tensor::zeros([1, 3, 64, 64])).is_err());
        assert!(ae.forward(&Tensor::zeros([1, 1, 128, 128])).is_err());
    }

    #[test]
    fn loss_is_zero_only_on_exact_match() {
        let a = Tensor::filled([1, 3, 4, 4], 0.3);
        assert_eq!(reconstruction_loss(&a, &a).unwrap().0, 0.0);
        let b = Tensor::filled([1, 3, 4, 4], 0.4);
        assert!(reconstruction_loss(&a, &b).unwrap().0 > 0.0);
    }

    #[test]
    fn too_few_patches_is_an_error() {
        assert!(train_autoencoder(&synthetic_patches(1), &quick_config(0), None).is_err());
        assert!(train_autoencoder(&[], &quick_config(0), None).is_err());
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let p = synthetic_patches(4);
        let a = train_autoencoder(&p, &quick_config(3), None).unwrap();
        let b = train_autoencoder(&p, &quick_config(3), None).unwrap();
        let losses = |t: &TrainedAutoencoder| {
            t.history.iter().map(|h| (h.train_loss, h.val_loss)).collect::<Vec<_>>()
        };
        assert_eq!(losses(&a), losses(&b));
    }

    #[test]
    fn patience_halts_before_cap() {
        let p = synthetic_patches(4);
        let cfg = AutoencoderConfig {
            max_epochs: 200,
            early_stop_patience: 1,
            learning_rate: 0.5,
            ..quick_config(5)
        };
        let t = train_autoencoder(&p, &cfg, None).unwrap();
        assert!(t.history.len() < 200);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.ckpt");
        let ae = Autoencoder::new(quick_config(9)).unwrap();
        let meta = AutoencoderMeta {
            kind: "autoencoder".into(),
            schema_version: AUTOENCODER_SCHEMA,
            center_id: 2,
            config: ae.config().clone(),
            best_epoch: None,
            best_val_loss: None,
        };
        ae.save(&path, &meta).unwrap();
        let (back, meta2) = Autoencoder::load(&path).unwrap();
        assert_eq!(meta2.center_id, 2);
        let x = batch(&synthetic_patches(1), &[0]).unwrap();
        assert_eq!(ae.forward(&x).unwrap().0, back.forward(&x).unwrap().0);
    }

    #[test]
    fn overfits_sixteen_patches() {
        let p = synthetic_patches(16);
        let cfg = AutoencoderConfig {
            max_epochs: 500,
            seed: 1,
            ..AutoencoderConfig::default()
        };
        let t = train_autoencoder(&p, &cfg, None).unwrap();
        let first = t.history[0].train_loss;
        let idx: Vec<usize> = (0..16).collect();
        let final_mse = eval_loss(&t.model, &p, &idx, 8).unwrap();
        assert!(t.history.last().unwrap().train_loss < first);
        assert!(final_mse < 0.01, "final reconstruction MSE {final_mse}");
    }
}
