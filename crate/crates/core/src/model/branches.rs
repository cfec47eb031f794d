use super::trunk::{Exec, Trunk, TrunkCache};
use super::LadderEntry;
use crate::error::Result;
use crate::nn::{Conv2d, ConvBnRelu};
use crate::tensor::Tensor;

use super::blocks::{DecoderBlock, EncoderBlock};
use super::CoFcnConfig;
use rand::Rng;

/// Shot-averaged conditioning features handed to the segmentation branch:
/// encoder outputs E1..E4 and decoder outputs D4, D3, D2.
#[derive(Clone, Debug)]
pub(crate) struct CondFeatures {
    pub enc: Vec<Tensor>,
    pub dec: Vec<Tensor>,
}

pub(crate) fn seg_trunk<R: Rng>(prefix: &str, cfg: &CoFcnConfig, conditioned: bool, rng: &mut R) -> Trunk {
    let [c1, c2, c3, c4] = cfg.encoder_channels;
    let [d1, d2, d3, d4] = cfg.decoder_channels;
    let m = if conditioned { 2 } else { 1 };
    let enc = vec![
        EncoderBlock::new(&format!("{prefix}.enc1"), 3, c1, rng),
        EncoderBlock::new(&format!("{prefix}.enc2"), m * c1, c2, rng),
        EncoderBlock::new(&format!("{prefix}.enc3"), m * c2, c3, rng),
        EncoderBlock::new(&format!("{prefix}.enc4"), m * c3, c4, rng),
    ];
    let bottleneck = ConvBnRelu::same3(&format!("{prefix}.bottleneck"), m * c4, c4, rng);
    let dec = vec![
        DecoderBlock::new(&format!("{prefix}.dec4"), c4, m * c3, d4, rng),
        DecoderBlock::new(&format!("{prefix}.dec3"), m * d4, m * c2, d3, rng),
        DecoderBlock::new(&format!("{prefix}.dec2"), m * d3, m * c1, d2, rng),
        DecoderBlock::new(&format!("{prefix}.dec1"), m * d2, m * c1, d1, rng),
    ];
    Trunk { enc, bottleneck, dec }
}

pub(crate) fn cond_trunk<R: Rng>(prefix: &str, cfg: &CoFcnConfig, rng: &mut R) -> Trunk {
    let [c1, c2, c3, c4] = cfg.encoder_channels;
    let [d1, d2, d3, d4] = cfg.decoder_channels;
    let enc = vec![
        EncoderBlock::new(&format!("{prefix}.enc1"), 3, c1, rng),
        EncoderBlock::new(&format!("{prefix}.enc2"), c1, c2, rng),
        EncoderBlock::new(&format!("{prefix}.enc3"), c2, c3, rng),
        EncoderBlock::new(&format!("{prefix}.enc4"), c3, c4, rng),
    ];
    let bottleneck = ConvBnRelu::same3(&format!("{prefix}.bottleneck"), c4, c4, rng);
    let dec = vec![
        DecoderBlock::new(&format!("{prefix}.dec4"), c4, 0, d4, rng),
        DecoderBlock::new(&format!("{prefix}.dec3"), d4, 0, d3, rng),
        DecoderBlock::new(&format!("{prefix}.dec2"), d3, 0, d2, rng),
        DecoderBlock::new(&format!("{prefix}.dec1"), d2, 0, d1, rng),
    ];
    Trunk { enc, bottleneck, dec }
}

fn entry(block: &str, channels: usize, t: &Tensor) -> LadderEntry {
    LadderEntry {
        block: block.to_string(),
        channels,
        height: t.h(),
        width: t.w(),
    }
}

const DEC_NAMES: [&str; 4] = ["D4", "D3", "D2", "D1"];

pub(crate) struct SegPass {
    pub logits: Tensor,
    pub head_input: Tensor,
}

/// Segmentation branch wiring. Skips: D4 <- pooled E3, D3 <- pooled E2,
/// D2 <- pooled E1, D1 <- full-resolution E1, all taken after the
/// conditioning concat.
pub(crate) fn seg_pass<E: Exec>(
    ex: &mut E,
    head: &Conv2d,
    x: &Tensor,
    cond: Option<&CondFeatures>,
    ladder: &mut Vec<LadderEntry>,
) -> Result<SegPass> {
    let mut h = x.clone();
    let mut full_e1 = None;
    let mut pooled = Vec::with_capacity(3);
    for i in 0..4 {
        let j = cond.map(|c| &c.enc[i]);
        let (f, p) = ex.enc(i, &h, j)?;
        let own = f.c() - j.map_or(0, |t| t.c());
        ladder.push(entry(&format!("E{}", i + 1), own, &f));
        if i == 0 {
            full_e1 = Some(f);
        }
        if i < 3 {
            pooled.push(p.clone());
        }
        h = p;
    }
    let mut d = ex.bottleneck(&h)?;
    ladder.push(entry("BN", d.c(), &d));
    for i in 0..4 {
        let skip = if i < 3 { &pooled[2 - i] } else { full_e1.as_ref().unwrap() };
        d = ex.dec(i, &d, Some(skip))?;
        ladder.push(entry(DEC_NAMES[i], d.c(), &d));
        if let (Some(c), true) = (cond, i < 3) {
            d = Tensor::concat_channels(&d, &c.dec[i])?;
        }
    }
    let logits = head.forward(&d)?;
    Ok(SegPass {
        logits,
        head_input: d,
    })
}

/// Gradients of the segmentation branch; returns the gradient on the
/// conditioning features when they were concatenated in.
pub(crate) fn seg_backward(
    trunk: &mut Trunk,
    head: &mut Conv2d,
    cache: &TrunkCache,
    head_input: &Tensor,
    d_logits: &Tensor,
    conditioned: bool,
) -> Result<Option<CondFeatures>> {
    let dec_out: Vec<usize> = trunk.dec.iter().map(|d| d.stage.out_channels()).collect();
    let mut dd = head.backward(head_input, d_logits)?;
    let mut d_skips: Vec<Option<Tensor>> = vec![None, None, None, None];
    let mut cond_dec = vec![None, None, None];
    for i in (0..4).rev() {
        if conditioned && i < 3 {
            let (own, dc) = dd.split_channels(dec_out[i]);
            cond_dec[i] = Some(dc);
            dd = own;
        }
        let (du, ds) = trunk.dec[i].backward(&cache.dec[i], &dd)?;
        d_skips[i] = ds;
        dd = du;
    }
    let bn_cache = cache.bottleneck.as_ref().expect("bottleneck cache");
    let mut d_pooled = trunk.bottleneck.backward(bn_cache, &dd)?;
    let mut cond_enc = vec![None, None, None, None];
    for i in (0..4).rev() {
        // pooled E1..E3 also feed D2..D4; full-resolution E1 feeds D1
        let d_features = if i == 0 { d_skips[3].as_ref() } else { None };
        let (dx, dj) = trunk.enc[i].backward(&cache.enc[i], d_features, &d_pooled)?;
        cond_enc[i] = dj;
        d_pooled = dx;
        if i > 0 {
            if let Some(s) = &d_skips[3 - i] {
                d_pooled.add_assign(s);
            }
        }
    }
    if !conditioned {
        return Ok(None);
    }
    Ok(Some(CondFeatures {
        enc: cond_enc.into_iter().map(|t| t.expect("junction grad")).collect(),
        dec: cond_dec.into_iter().map(|t| t.expect("junction grad")).collect(),
    }))
}

pub(crate) struct CondPass {
    /// Per-shot features: E1..E4 then D4, D3, D2.
    pub enc: Vec<Tensor>,
    pub dec: Vec<Tensor>,
    pub logits: Tensor,
    pub head_input: Tensor,
}

/// Conditioning branch over a batch of single shots (no skips).
pub(crate) fn cond_pass<E: Exec>(
    ex: &mut E,
    head: &Conv2d,
    shots: &Tensor,
    ladder: &mut Vec<LadderEntry>,
) -> Result<CondPass> {
    let mut h = shots.clone();
    let mut enc = Vec::with_capacity(4);
    for i in 0..4 {
        let (f, p) = ex.enc(i, &h, None)?;
        ladder.push(entry(&format!("cond.E{}", i + 1), f.c(), &f));
        enc.push(f);
        h = p;
    }
    let mut d = ex.bottleneck(&h)?;
    ladder.push(entry("cond.BN", d.c(), &d));
    let mut dec = Vec::with_capacity(3);
    for (i, name) in DEC_NAMES.iter().enumerate() {
        d = ex.dec(i, &d, None)?;
        ladder.push(entry(&format!("cond.{name}"), d.c(), &d));
        if i < 3 {
            dec.push(d.clone());
        }
    }
    let logits = head.forward(&d)?;
    Ok(CondPass {
        enc,
        dec,
        logits,
        head_input: d,
    })
}

/// Mean over the `k` consecutive shots of each sample.
pub(crate) fn shot_mean(x: &Tensor, k: usize) -> Tensor {
    let [nk, c, h, w] = x.shape();
    let n = nk / k;
    let mut out = Tensor::zeros([n, c, h, w]);
    let inv = 1.0 / k as f32;
    for s in 0..n {
        let dst = out.sample_mut(s);
        for j in 0..k {
            for (o, &v) in dst.iter_mut().zip(x.sample(s * k + j)) {
                *o += v;
            }
        }
        dst.iter_mut().for_each(|o| *o *= inv);
    }
    out
}

/// Adjoint of [`shot_mean`].
pub(crate) fn shot_spread(d: &Tensor, k: usize) -> Tensor {
    let [n, c, h, w] = d.shape();
    let mut out = Tensor::zeros([n * k, c, h, w]);
    let inv = 1.0 / k as f32;
    for s in 0..n {
        for j in 0..k {
            for (o, &v) in out.sample_mut(s * k + j).iter_mut().zip(d.sample(s)) {
                *o = v * inv;
            }
        }
    }
    out
}

pub(crate) fn cond_backward(
    trunk: &mut Trunk,
    head: &mut Conv2d,
    cache: &TrunkCache,
    head_input: &Tensor,
    d_logits: &Tensor,
    d_agg: &CondFeatures,
    k: usize,
) -> Result<()> {
    let mut dd = head.backward(head_input, d_logits)?;
    for i in (0..4).rev() {
        let (du, _) = trunk.dec[i].backward(&cache.dec[i], &dd)?;
        dd = du;
        if i > 0 {
            dd.add_assign(&shot_spread(&d_agg.dec[i - 1], k));
        }
    }
    let bn_cache = cache.bottleneck.as_ref().expect("bottleneck cache");
    let mut d_pooled = trunk.bottleneck.backward(bn_cache, &dd)?;
    for i in (0..4).rev() {
        let df = shot_spread(&d_agg.enc[i], k);
        let (dx, _) = trunk.enc[i].backward(&cache.enc[i], Some(&df), &d_pooled)?;
        d_pooled = dx;
    }
    Ok(())
}
