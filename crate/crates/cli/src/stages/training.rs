//! co-FCN and U-Net training.

use anyhow::Context;
use cofcn_core::patches::{PatchRecord, SlideStore};
use cofcn_core::training::{train_cofcn, train_unet, EpochLog, PatchPool, TrainSample, TrainSet};
use serde::{Deserialize, Serialize};

use super::data::{manifests, open_store};
use super::selection::load_selection;
use super::Ctx;
use crate::workdir::{write_json, Stage};

pub const UNET_CKPT: &str = "unet.ckpt";

pub fn cofcn_file(k: usize) -> String {
    format!("cofcn_k{k}.ckpt")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub model: String,
    pub n_samples: usize,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    /// Loss of the saved weights on the training split, inference mode.
    pub final_train_loss: f64,
    pub history: Vec<EpochLog>,
}

fn add(pool: &mut PatchPool, store: &mut SlideStore, r: &PatchRecord) -> anyhow::Result<usize> {
    if let Some(i) = pool.get(&r.patch_ref()) {
        return Ok(i);
    }
    let px = store.patch_pixels(r)?;
    let mask = store.patch_mask(r)?;
    Ok(pool.insert(r.patch_ref(), px, mask)?)
}

pub fn train_cofcn_stage(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = ctx.cfg;
    let dir = ctx.work.begin(Stage::TrainCofcn)?;
    let records = manifests(ctx)?.by_ref();
    let mut store = open_store(ctx)?;
    let mut written = Vec::new();
    for &k in &cfg.model.shots {
        let mut set = TrainSet::default();
        for s in load_selection(ctx, k)? {
            let a = &s.assignment;
            let q = records.get(&a.query_ref).with_context(|| format!("query {} not in manifests", a.query_ref))?;
            let query = add(&mut set.pool, &mut store, q)?;
            let mut shots = Vec::with_capacity(k);
            for r in &a.shots {
                let rec = records.get(r).with_context(|| format!("support patch {r} not in manifests"))?;
                shots.push(add(&mut set.pool, &mut store, rec)?);
            }
            set.samples.push(TrainSample { query, shots, pi: s.pi });
        }
        let net = cfg.network_config(k, cfg.stage_seed(&format!("train-cofcn/k{k}/init")));
        let tc = cfg.train_config(k, cfg.stage_seed(&format!("train-cofcn/k{k}")));
        log::info!("train-cofcn: k={k}, {} samples, {} distinct patches", set.samples.len(), set.pool.len());
        let trained = train_cofcn(&net, &set, &tc)?;
        log::info!(
            "train-cofcn: k={k}, best epoch {:?}, val {:.6}, train {:.6}",
            trained.best_epoch,
            trained.best_val_loss,
            trained.final_train_loss
        );
        let ckpt = dir.join(cofcn_file(k));
        trained.model.save(&ckpt, trained.best_epoch, Some(trained.best_val_loss))?;
        let summary = dir.join(format!("cofcn_k{k}_history.json"));
        write_json(
            &summary,
            &TrainingSummary {
                model: format!("cofcn_k{k}"),
                n_samples: set.samples.len(),
                best_epoch: trained.best_epoch,
                best_val_loss: trained.best_val_loss,
                final_train_loss: trained.final_train_loss,
                history: trained.history,
            },
        )?;
        written.extend([ckpt, summary]);
    }
    ctx.work.finish(Stage::TrainCofcn, cfg, cfg.stage_seed("train-cofcn"), &written)
}

/// The baseline sees the same query patches without support.
pub fn train_unet_stage(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = ctx.cfg;
    let dir = ctx.work.begin(Stage::TrainUnet)?;
    let m = manifests(ctx)?;
    let mut store = open_store(ctx)?;
    let mut queries: Vec<&PatchRecord> = m.query.records.iter().collect();
    queries.sort_by_key(|r| r.patch_ref());
    let mut set = TrainSet::default();
    for q in queries {
        let query = add(&mut set.pool, &mut store, q)?;
        set.samples.push(TrainSample { query, shots: vec![], pi: 0.0 });
    }
    let k = cfg.model.shots.first().copied().unwrap_or(1);
    let net = cfg.network_config(k, cfg.stage_seed("train-unet/init"));
    let tc = cfg.train_config(k, cfg.stage_seed("train-unet"));
    log::info!("train-unet: {} samples", set.samples.len());
    let trained = train_unet(&net, &set, &tc)?;
    let ckpt = dir.join(UNET_CKPT);
    trained.model.save(&ckpt, trained.best_epoch, Some(trained.best_val_loss))?;
    let summary = dir.join("unet_history.json");
    write_json(
        &summary,
        &TrainingSummary {
            model: "unet".into(),
            n_samples: set.samples.len(),
            best_epoch: trained.best_epoch,
            best_val_loss: trained.best_val_loss,
            final_train_loss: trained.final_train_loss,
            history: trained.history,
        },
    )?;
    ctx.work.finish(Stage::TrainUnet, cfg, cfg.stage_seed("train-unet"), &[ckpt, summary])
}
