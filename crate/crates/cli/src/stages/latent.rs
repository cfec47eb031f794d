//! Per-center autoencoders, embeddings and PCA.

use std::collections::HashSet;

use anyhow::bail;
use cofcn_core::latent::{
    fit_pca, read_embeddings, train_autoencoder, write_embeddings, AutoencoderMeta, EmbeddingRecord, Embedder,
    PcaModel, AUTOENCODER_SCHEMA,
};
use cofcn_core::patches::PatchRef;
use serde::{Deserialize, Serialize};

use super::data::{manifests, open_store};
use super::Ctx;
use crate::workdir::{read_json, write_json, Stage};

const EMBED_CHUNK: usize = 32;

pub fn ae_file(center: u8) -> String {
    format!("center{center}.ckpt")
}

pub fn pca_file(center: u8) -> String {
    format!("center{center}_pca.json")
}

pub fn projected_file(center: u8) -> String {
    format!("center{center}_embeddings.jsonl")
}

#[derive(Serialize, Deserialize)]
pub struct AeSummary {
    pub center_id: u8,
    pub n_patches: usize,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    pub history: Vec<cofcn_core::training::EpochLog>,
}

pub fn train_ae(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = ctx.cfg;
    let dir = ctx.work.begin(Stage::TrainAe)?;
    let m = manifests(ctx)?;
    let mut store = open_store(ctx)?;
    let mut written = Vec::new();
    for c in ctx.centers(&cfg.all_centers()) {
        let recs = m.center_records(c);
        if recs.len() < 2 {
            bail!("center {c} has {} training patches; the autoencoder needs at least 2", recs.len());
        }
        let patches = recs.iter().map(|r| store.patch_pixels(r)).collect::<Result<Vec<_>, _>>()?;
        let seed = cfg.stage_seed(&format!("train-ae/center{c}"));
        let ae_cfg = cfg.autoencoder_config(seed);
        log::info!("train-ae: center {c}, {} patches", patches.len());
        let trained = train_autoencoder(&patches, &ae_cfg, None)?;
        let meta = AutoencoderMeta {
            kind: "autoencoder".into(),
            schema_version: AUTOENCODER_SCHEMA,
            center_id: c,
            config: ae_cfg,
            best_epoch: trained.best_epoch,
            best_val_loss: Some(trained.best_val_loss),
        };
        let path = dir.join(ae_file(c));
        trained.model.save(&path, &meta)?;
        let hist = dir.join(format!("center{c}_history.json"));
        write_json(
            &hist,
            &AeSummary {
                center_id: c,
                n_patches: patches.len(),
                best_epoch: trained.best_epoch,
                best_val_loss: trained.best_val_loss,
                history: trained.history,
            },
        )?;
        written.extend([path, hist]);
    }
    ctx.work.finish(Stage::TrainAe, cfg, cfg.stage_seed("train-ae"), &written)
}

pub fn embedder(ctx: &Ctx, centers: &[u8]) -> anyhow::Result<Embedder> {
    let mut e = Embedder::new();
    for &c in centers {
        e.load(c, &ctx.work.input(Stage::TrainAe, &ae_file(c))?)?;
    }
    Ok(e)
}

pub fn embed(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = ctx.cfg;
    let dir = ctx.work.begin(Stage::Embed)?;
    let m = manifests(ctx)?;
    let mut store = open_store(ctx)?;
    let mut written = Vec::new();
    for c in ctx.centers(&cfg.all_centers()) {
        let e = embedder(ctx, &[c])?;
        let recs = m.center_records(c);
        let mut out = Vec::with_capacity(recs.len());
        for chunk in recs.chunks(EMBED_CHUNK) {
            let px = chunk.iter().map(|r| store.patch_pixels(r)).collect::<Result<Vec<_>, _>>()?;
            let views: Vec<&[f32]> = px.iter().map(|p| p.as_slice()).collect();
            for (r, latent) in chunk.iter().zip(e.embed_batch(c, &views)?) {
                out.push(EmbeddingRecord { patch_ref: r.patch_ref(), latent, projected: None });
            }
        }
        let path = dir.join(format!("center{c}.jsonl"));
        write_embeddings(&path, &out)?;
        log::info!("embed: center {c}, {} vectors", out.len());
        written.push(path);
    }
    ctx.work.finish(Stage::Embed, cfg, cfg.stage_seed("embed"), &written)
}

/// Fits the 3-D PCA on each center's support embeddings and projects every
/// embedding of that center.
pub fn fit_pca_stage(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = ctx.cfg;
    let dir = ctx.work.begin(Stage::FitPca)?;
    let m = manifests(ctx)?;
    let mut written = Vec::new();
    for c in ctx.centers(&cfg.all_centers()) {
        let support: HashSet<PatchRef> = m
            .support
            .records
            .iter()
            .filter(|r| r.center_id == c)
            .map(|r| r.patch_ref())
            .collect();
        let mut recs = read_embeddings(&ctx.work.input(Stage::Embed, &format!("center{c}.jsonl"))?)?;
        let fit_on: Vec<[f64; 8]> = recs.iter().filter(|r| support.contains(&r.patch_ref)).map(|r| r.latent).collect();
        let pca = fit_pca(&fit_on, 3)?;
        for r in &mut recs {
            r.projected = Some(pca.project3(&r.latent)?);
        }
        let p = dir.join(pca_file(c));
        write_json(&p, &pca)?;
        let e = dir.join(projected_file(c));
        write_embeddings(&e, &recs)?;
        log::info!(
            "fit-pca: center {c}, {} support vectors, explained variance {:?}",
            fit_on.len(),
            pca.explained_variance
        );
        written.extend([p, e]);
    }
    ctx.work.finish(Stage::FitPca, cfg, cfg.stage_seed("fit-pca"), &written)
}

pub fn load_pca(ctx: &Ctx, c: u8) -> anyhow::Result<PcaModel> {
    read_json(&ctx.work.input(Stage::FitPca, &pca_file(c))?)
}

pub fn load_projected(ctx: &Ctx, c: u8) -> anyhow::Result<Vec<EmbeddingRecord>> {
    Ok(read_embeddings(&ctx.work.input(Stage::FitPca, &projected_file(c))?)?)
}
