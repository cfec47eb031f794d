//! Two-branch conditional FCN and the matching baseline U-Net.

mod blocks;
mod branches;
mod trunk;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use blocks::{DecoderBlock, DecoderCache, EncoderBlock, EncoderCache};

use branches::{
    cond_backward, cond_pass, cond_trunk, seg_backward, seg_pass, seg_trunk, shot_mean,
    CondFeatures,
};
use trunk::{Eval, Train, Trunk, TrunkCache};

use crate::error::{invalid, shape_err, Error, Result};
use crate::nn::state::{read_checkpoint, read_meta, write_checkpoint};
use crate::nn::{sigmoid, Conv2d, Module, Param};
use crate::patches::PATCH_SIZE;
use crate::selection::ALLOWED_SHOTS;
use crate::tensor::Tensor;

pub const SPATIAL_LADDER: [usize; 5] = [128, 64, 32, 16, 8];
pub const NETWORK_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoFcnConfig {
    pub k_shots: usize,
    /// C1..C4
    pub encoder_channels: [usize; 4],
    /// D1..D4
    pub decoder_channels: [usize; 4],
    pub seed: u64,
}

impl Default for CoFcnConfig {
    fn default() -> Self {
        CoFcnConfig {
            k_shots: 8,
            encoder_channels: [32, 64, 128, 256],
            decoder_channels: [32, 32, 64, 128],
            seed: 0,
        }
    }
}

impl CoFcnConfig {
    pub fn with_k(k_shots: usize) -> Self {
        CoFcnConfig {
            k_shots,
            ..CoFcnConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !ALLOWED_SHOTS.contains(&self.k_shots) {
            return invalid(format!("k_shots {} not in {ALLOWED_SHOTS:?}", self.k_shots));
        }
        if self.encoder_channels.iter().chain(&self.decoder_channels).any(|&c| c == 0) {
            return invalid("channel widths must be positive");
        }
        Ok(())
    }

    pub fn cond_in_channels(&self) -> usize {
        3 * self.k_shots
    }
}

/// Shape of one block output, as recorded during a forward pass.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub block: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug)]
pub struct CoFcnOutput {
    /// `N x 1 x 128 x 128` lesion probability.
    pub seg_prob: Tensor,
    pub background_prob: Tensor,
    /// `N x k x 128 x 128` classifier logits, one plane per shot.
    pub cond_map: Tensor,
    pub cond_score: Vec<f64>,
}

/// Two-channel softmax of the head logits, computed in f64.
fn softmax2(logits: &Tensor) -> (Tensor, Tensor) {
    let [n, _, h, w] = logits.shape();
    let mut fg = Tensor::zeros([n, 1, h, w]);
    let mut bg = Tensor::zeros([n, 1, h, w]);
    for s in 0..n {
        let z0 = logits.plane(s, 0);
        let z1 = logits.plane(s, 1);
        let f = fg.sample_mut(s);
        for ((o, &a), &b) in f.iter_mut().zip(z0).zip(z1) {
            *o = sigmoid(b as f64 - a as f64) as f32;
        }
        let g = bg.sample_mut(s);
        for ((o, &a), &b) in g.iter_mut().zip(z0).zip(z1) {
            *o = sigmoid(a as f64 - b as f64) as f32;
        }
    }
    (fg, bg)
}

/// `z1 - z0` per pixel: the lesion logit of the two-class softmax.
fn logit_diff(logits: &Tensor) -> Tensor {
    let [n, _, h, w] = logits.shape();
    let mut out = Tensor::zeros([n, 1, h, w]);
    for s in 0..n {
        let (z0, z1) = (logits.plane(s, 0), logits.plane(s, 1));
        for ((o, &a), &b) in out.sample_mut(s).iter_mut().zip(z0).zip(z1) {
            *o = b - a;
        }
    }
    out
}

fn logit_diff_backward(d: &Tensor) -> Tensor {
    let [n, _, h, w] = d.shape();
    let mut out = Tensor::zeros([n, 2, h, w]);
    let hw = h * w;
    for s in 0..n {
        let g = d.sample(s);
        let dst = out.sample_mut(s);
        let (d0, d1) = dst.split_at_mut(hw);
        for ((a, b), &v) in d0.iter_mut().zip(d1.iter_mut()).zip(g) {
            *a = -v;
            *b = v;
        }
    }
    out
}

/// Mean over every entry of each sample's cond map, through a sigmoid. Shot
/// sums are added in sorted order so the score ignores shot order exactly.
pub fn cond_score(cond_map: &Tensor) -> Vec<f64> {
    (0..cond_map.n())
        .map(|s| {
            let mut sums: Vec<f64> = (0..cond_map.c())
                .map(|j| cond_map.plane(s, j).iter().map(|&v| v as f64).sum())
                .collect();
            sums.sort_by(f64::total_cmp);
            let total: f64 = sums.iter().sum();
            sigmoid(total / cond_map.sample_len() as f64)
        })
        .collect()
}

fn check_query(x: &Tensor) -> Result<()> {
    let [_, c, h, w] = x.shape();
    if c != 3 || h != PATCH_SIZE || w != PATCH_SIZE {
        return shape_err(format!(
            "query must be Nx3x{PATCH_SIZE}x{PATCH_SIZE}, got {:?}",
            x.shape()
        ));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct CoFcn {
    config: CoFcnConfig,
    cond: Trunk,
    cond_head: Conv2d,
    seg: Trunk,
    seg_head: Conv2d,
}

pub struct CoFcnCache {
    cond: TrunkCache,
    cond_head_input: Tensor,
    seg: TrunkCache,
    seg_head_input: Tensor,
}

/// Training-mode outputs: the lesion logit `z1 - z0` and the raw cond map.
pub struct TrainOutput {
    pub logit: Tensor,
    pub cond_map: Option<Tensor>,
}

impl CoFcn {
    pub fn new(config: CoFcnConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let cond = cond_trunk("cofcn.cond", &config, &mut rng);
        let cond_head = Conv2d::pointwise("cofcn.cond.cl", config.decoder_channels[0], 1, &mut rng);
        let seg = seg_trunk("cofcn.seg", &config, true, &mut rng);
        let seg_head = Conv2d::pointwise("cofcn.seg.head", config.decoder_channels[0], 2, &mut rng);
        Ok(CoFcn {
            config,
            cond,
            cond_head,
            seg,
            seg_head,
        })
    }

    pub fn config(&self) -> &CoFcnConfig {
        &self.config
    }

    fn check_support(&self, query: &Tensor, support: &Tensor) -> Result<Tensor> {
        check_query(query)?;
        let [n, c, h, w] = support.shape();
        let k = self.config.k_shots;
        if c != 3 * k {
            return shape_err(format!(
                "conditioning input has {c} channels, model built for k = {k} expects {}",
                3 * k
            ));
        }
        if n != query.n() || h != PATCH_SIZE || w != PATCH_SIZE {
            return shape_err(format!(
                "support {:?} does not pair with query {:?}",
                support.shape(),
                query.shape()
            ));
        }
        // shot j occupies channels 3j..3j+3, so this is a pure reshape
        support.clone().reshape([n * k, 3, h, w])
    }

    fn aggregate(&self, enc: &[Tensor], dec: &[Tensor]) -> CondFeatures {
        let k = self.config.k_shots;
        CondFeatures {
            enc: enc.iter().map(|t| shot_mean(t, k)).collect(),
            dec: dec.iter().map(|t| shot_mean(t, k)).collect(),
        }
    }

    fn cond_map_of(&self, logits: Tensor, n: usize) -> Result<Tensor> {
        logits.reshape([n, self.config.k_shots, PATCH_SIZE, PATCH_SIZE])
    }

    /// Inference-mode forward pass plus the recorded feature ladder.
    pub fn forward_traced(&self, query: &Tensor, support: &Tensor) -> Result<(CoFcnOutput, Vec<LadderEntry>)> {
        let shots = self.check_support(query, support)?;
        let mut ladder = Vec::new();
        let cp = cond_pass(&mut Eval(&self.cond), &self.cond_head, &shots, &mut ladder)?;
        let agg = self.aggregate(&cp.enc, &cp.dec);
        let sp = seg_pass(&mut Eval(&self.seg), &self.seg_head, query, Some(&agg), &mut ladder)?;
        let (seg_prob, background_prob) = softmax2(&sp.logits);
        let cond_map = self.cond_map_of(cp.logits, query.n())?;
        let cond_score = cond_score(&cond_map);
        Ok((
            CoFcnOutput {
                seg_prob,
                background_prob,
                cond_map,
                cond_score,
            },
            ladder,
        ))
    }

    pub fn forward(&self, query: &Tensor, support: &Tensor) -> Result<CoFcnOutput> {
        Ok(self.forward_traced(query, support)?.0)
    }

    pub fn forward_train(&mut self, query: &Tensor, support: &Tensor) -> Result<(TrainOutput, CoFcnCache)> {
        let shots = self.check_support(query, support)?;
        let mut ladder = Vec::new();
        let mut cex = Train {
            trunk: &mut self.cond,
            cache: TrunkCache::default(),
        };
        let cp = cond_pass(&mut cex, &self.cond_head, &shots, &mut ladder)?;
        let cond_cache = cex.cache;
        let agg = self.aggregate(&cp.enc, &cp.dec);
        let mut sex = Train {
            trunk: &mut self.seg,
            cache: TrunkCache::default(),
        };
        let sp = seg_pass(&mut sex, &self.seg_head, query, Some(&agg), &mut ladder)?;
        let seg_cache = sex.cache;
        let cond_map = self.cond_map_of(cp.logits, query.n())?;
        Ok((
            TrainOutput {
                logit: logit_diff(&sp.logits),
                cond_map: Some(cond_map),
            },
            CoFcnCache {
                cond: cond_cache,
                cond_head_input: cp.head_input,
                seg: seg_cache,
                seg_head_input: sp.head_input,
            },
        ))
    }

    /// Accumulates parameter gradients from gradients on the lesion logit
    /// and on the cond map.
    pub fn backward(&mut self, cache: &CoFcnCache, d_logit: &Tensor, d_cond_map: &Tensor) -> Result<()> {
        let d_agg = seg_backward(
            &mut self.seg,
            &mut self.seg_head,
            &cache.seg,
            &cache.seg_head_input,
            &logit_diff_backward(d_logit),
            true,
        )?
        .expect("conditioned branch");
        let [n, k, h, w] = d_cond_map.shape();
        let d_cl = d_cond_map.clone().reshape([n * k, 1, h, w])?;
        cond_backward(
            &mut self.cond,
            &mut self.cond_head,
            &cache.cond,
            &cache.cond_head_input,
            &d_cl,
            &d_agg,
            self.config.k_shots,
        )
    }
}

impl Module for CoFcn {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.cond.params();
        p.extend(self.cond_head.params());
        p.extend(self.seg.params());
        p.extend(self.seg_head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.cond.params_mut();
        p.extend(self.cond_head.params_mut());
        p.extend(self.seg.params_mut());
        p.extend(self.seg_head.params_mut());
        p
    }
}

/// The segmentation branch alone, without conditioning concatenations.
#[derive(Clone, Debug)]
pub struct UNet {
    config: CoFcnConfig,
    seg: Trunk,
    seg_head: Conv2d,
}

pub struct UNetCache {
    seg: TrunkCache,
    head_input: Tensor,
}

impl UNet {
    /// `k_shots` in the config is ignored.
    pub fn new(config: CoFcnConfig) -> Result<Self> {
        CoFcnConfig { k_shots: 1, ..config.clone() }.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let seg = seg_trunk("unet", &config, false, &mut rng);
        let seg_head = Conv2d::pointwise("unet.head", config.decoder_channels[0], 2, &mut rng);
        Ok(UNet {
            config,
            seg,
            seg_head,
        })
    }

    pub fn config(&self) -> &CoFcnConfig {
        &self.config
    }

    pub fn forward_traced(&self, query: &Tensor) -> Result<(Tensor, Vec<LadderEntry>)> {
        check_query(query)?;
        let mut ladder = Vec::new();
        let sp = seg_pass(&mut Eval(&self.seg), &self.seg_head, query, None, &mut ladder)?;
        Ok((softmax2(&sp.logits).0, ladder))
    }

    /// `N x 1 x 128 x 128` lesion probability.
    pub fn forward(&self, query: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(query)?.0)
    }

    pub fn forward_train(&mut self, query: &Tensor) -> Result<(TrainOutput, UNetCache)> {
        check_query(query)?;
        let mut ladder = Vec::new();
        let mut ex = Train {
            trunk: &mut self.seg,
            cache: TrunkCache::default(),
        };
        let sp = seg_pass(&mut ex, &self.seg_head, query, None, &mut ladder)?;
        Ok((
            TrainOutput {
                logit: logit_diff(&sp.logits),
                cond_map: None,
            },
            UNetCache {
                seg: ex.cache,
                head_input: sp.head_input,
            },
        ))
    }

    pub fn backward(&mut self, cache: &UNetCache, d_logit: &Tensor) -> Result<()> {
        seg_backward(
            &mut self.seg,
            &mut self.seg_head,
            &cache.seg,
            &cache.head_input,
            &logit_diff_backward(d_logit),
            false,
        )?;
        Ok(())
    }
}

impl Module for UNet {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.seg.params();
        p.extend(self.seg_head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.seg.params_mut();
        p.extend(self.seg_head.params_mut());
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    Cofcn,
    Unet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkMeta {
    pub kind: NetworkKind,
    pub schema_version: u32,
    pub config: CoFcnConfig,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
}

/// Header of a network checkpoint, whatever its kind.
pub fn read_network_meta(path: &Path) -> Result<NetworkMeta> {
    read_meta(BufReader::new(File::open(path)?))
}

fn load_meta(path: &Path, kind: NetworkKind, expected: Option<&CoFcnConfig>) -> Result<NetworkMeta> {
    let meta: NetworkMeta = read_meta(BufReader::new(File::open(path)?))?;
    if meta.kind != kind || meta.schema_version != NETWORK_SCHEMA {
        return Err(Error::Checkpoint(format!(
            "{}: holds {:?} schema {}, expected {kind:?} schema {NETWORK_SCHEMA}",
            path.display(),
            meta.kind,
            meta.schema_version
        )));
    }
    if let Some(e) = expected {
        let same = match kind {
            NetworkKind::Cofcn => meta.config.k_shots == e.k_shots,
            NetworkKind::Unet => true,
        } && meta.config.encoder_channels == e.encoder_channels
            && meta.config.decoder_channels == e.decoder_channels;
        if !same {
            return Err(Error::Checkpoint(format!(
                "{}: architecture {:?} does not match requested {:?}",
                path.display(),
                meta.config,
                e
            )));
        }
    }
    Ok(meta)
}

impl CoFcn {
    pub fn save(&self, path: &Path, best_epoch: Option<usize>, best_val_loss: Option<f64>) -> Result<()> {
        let meta = NetworkMeta {
            kind: NetworkKind::Cofcn,
            schema_version: NETWORK_SCHEMA,
            config: self.config.clone(),
            best_epoch,
            best_val_loss,
        };
        write_checkpoint(BufWriter::new(File::create(path)?), &meta, &self.params())
    }

    /// Loads a checkpoint, refusing one built for a different architecture
    /// when `expected` is given.
    pub fn load(path: &Path, expected: Option<&CoFcnConfig>) -> Result<(Self, NetworkMeta)> {
        let meta = load_meta(path, NetworkKind::Cofcn, expected)?;
        let mut model = CoFcn::new(meta.config.clone())?;
        read_checkpoint::<_, NetworkMeta>(BufReader::new(File::open(path)?), model.params_mut())?;
        Ok((model, meta))
    }
}

impl UNet {
    pub fn save(&self, path: &Path, best_epoch: Option<usize>, best_val_loss: Option<f64>) -> Result<()> {
        let meta = NetworkMeta {
            kind: NetworkKind::Unet,
            schema_version: NETWORK_SCHEMA,
            config: self.config.clone(),
            best_epoch,
            best_val_loss,
        };
        write_checkpoint(BufWriter::new(File::create(path)?), &meta, &self.params())
    }

    pub fn load(path: &Path, expected: Option<&CoFcnConfig>) -> Result<(Self, NetworkMeta)> {
        let meta = load_meta(path, NetworkKind::Unet, expected)?;
        let mut model = UNet::new(meta.config.clone())?;
        read_checkpoint::<_, NetworkMeta>(BufReader::new(File::open(path)?), model.params_mut())?;
        Ok((model, meta))
    }
}
