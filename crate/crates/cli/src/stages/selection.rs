//! GMM clustering, prototype pools and support selection.

use std::collections::HashMap;

use anyhow::{bail, Context};
use cofcn_core::patches::{PatchLabel, PatchRef};
use cofcn_core::selection::{
    build_prototype_pools, class_ratios, estimate_pi, fit_gmm, ClusterModel, SelectorArtifact, SupportAssignment,
    SupportMember, SELECTOR_SCHEMA,
};
use serde::{Deserialize, Serialize};

use super::data::manifests;
use super::latent::{load_pca, load_projected};
use super::Ctx;
use crate::workdir::{read_json, read_jsonl, write_json, write_jsonl, Stage};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClusterArtifact {
    pub model: ClusterModel,
    pub r_pos: Vec<f64>,
    pub r_neg: Vec<f64>,
}

/// One training query with its chosen shots and prevalence target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub assignment: SupportAssignment,
    pub pi: f64,
}

pub fn cluster_file(c: u8) -> String {
    format!("center{c}.json")
}

pub fn selector_file(c: u8) -> String {
    format!("selector_center{c}.json")
}

pub fn selection_file(k: usize) -> String {
    format!("k{k}.jsonl")
}

/// Support members of a center in PCA space, ordered by patch reference.
fn support_points(ctx: &Ctx, c: u8) -> anyhow::Result<Vec<(PatchRef, PatchLabel, [f64; 3])>> {
    let m = manifests(ctx)?;
    let labels: HashMap<PatchRef, PatchLabel> = m
        .support
        .records
        .iter()
        .filter(|r| r.center_id == c)
        .map(|r| (r.patch_ref(), r.label))
        .collect();
    let mut pts = Vec::new();
    for e in load_projected(ctx, c)? {
        if let Some(&l) = labels.get(&e.patch_ref) {
            let v = e.projected.with_context(|| format!("{} has no projection", e.patch_ref))?;
            pts.push((e.patch_ref, l, v));
        }
    }
    pts.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(pts)
}

pub fn cluster(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = ctx.cfg;
    let dir = ctx.work.begin(Stage::Cluster)?;
    let mut written = Vec::new();
    for c in ctx.centers(&cfg.all_centers()) {
        let pts = support_points(ctx, c)?;
        let vs: Vec<[f64; 3]> = pts.iter().map(|p| p.2).collect();
        let labels: Vec<PatchLabel> = pts.iter().map(|p| p.1).collect();
        let opts = cfg.gmm_options(cfg.stage_seed(&format!("cluster/center{c}")));
        let mut model = fit_gmm(&vs, c, &opts)?;
        let assign = model.assign_all(&vs)?;
        let (r_pos, r_neg) = class_ratios(&assign, &labels, model.n_components)?;
        model.pi_l = estimate_pi(&r_pos, &r_neg)?;
        log::info!(
            "cluster: center {c}, {} vectors, converged {}, pi_l {:?}",
            vs.len(),
            model.converged,
            model.pi_l
        );
        let path = dir.join(cluster_file(c));
        write_json(&path, &ClusterArtifact { model, r_pos, r_neg })?;
        written.push(path);
    }
    ctx.work.finish(Stage::Cluster, cfg, cfg.stage_seed("cluster"), &written)
}

pub fn prototypes(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = ctx.cfg;
    let dir = ctx.work.begin(Stage::Prototypes)?;
    let mut written = Vec::new();
    for c in ctx.centers(&cfg.all_centers()) {
        let ca: ClusterArtifact = read_json(&ctx.work.input(Stage::Cluster, &cluster_file(c))?)?;
        let pts = support_points(ctx, c)?;
        let mut members = Vec::with_capacity(pts.len());
        for (r, l, v) in pts {
            members.push(SupportMember { patch_ref: r, label: l, cluster_id: ca.model.assign(&v)?, pca: v });
        }
        let seed = cfg.stage_seed(&format!("prototypes/center{c}"));
        let pools = build_prototype_pools(c, &members, ca.model.n_components, cfg.selection.microcluster_dim, seed)?;
        let artifact = SelectorArtifact {
            schema_version: SELECTOR_SCHEMA,
            center_id: c,
            pca: load_pca(ctx, c)?,
            model: ca.model,
            r_pos: ca.r_pos,
            r_neg: ca.r_neg,
            microcluster_dim: cfg.selection.microcluster_dim,
            pools,
        };
        artifact.validate()?;
        let n: usize = artifact.pools.iter().map(|p| p.prototypes.len()).sum();
        log::info!("prototypes: center {c}, {n} prototypes in {} pools", artifact.pools.len());
        let path = dir.join(selector_file(c));
        artifact.save(&path)?;
        written.push(path);
    }
    ctx.work.finish(Stage::Prototypes, cfg, cfg.stage_seed("prototypes"), &written)
}

pub fn load_selector(ctx: &Ctx, c: u8) -> anyhow::Result<SelectorArtifact> {
    Ok(SelectorArtifact::load(&ctx.work.input(Stage::Prototypes, &selector_file(c))?)?)
}

/// Picks `k` shots for every training query, for each configured `k`.
pub fn select(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = ctx.cfg;
    let dir = ctx.work.begin(Stage::Select)?;
    let m = manifests(ctx)?;
    let mut latents = HashMap::new();
    let mut selectors = HashMap::new();
    for &c in &cfg.centers.train {
        for e in load_projected(ctx, c)? {
            latents.insert(e.patch_ref, e.latent);
        }
        selectors.insert(c, load_selector(ctx, c)?);
    }
    let mut queries: Vec<_> = m.query.records.iter().collect();
    queries.sort_by_key(|r| r.patch_ref());
    if queries.is_empty() {
        bail!("the query manifest is empty");
    }
    let mut written = Vec::new();
    for &k in &cfg.model.shots {
        let mut out = Vec::with_capacity(queries.len());
        let mut fallbacks = 0;
        for q in &queries {
            let r = q.patch_ref();
            let latent = latents.get(&r).with_context(|| format!("no embedding for query {r}"))?;
            let sel = selectors.get(&q.center_id).with_context(|| format!("no selector for center {}", q.center_id))?;
            let a = sel.select(&r, latent, k)?;
            fallbacks += a.fallbacks;
            let pi = sel.model.pi_l[a.cluster_id];
            out.push(SelectionRecord { assignment: a, pi });
        }
        if fallbacks > 0 {
            log::warn!("select: k={k}: {fallbacks} shots fell back to the opposite-class pool");
        }
        let path = dir.join(selection_file(k));
        write_jsonl(&path, &out)?;
        log::info!("select: k={k}, {} queries", out.len());
        written.push(path);
    }
    ctx.work.finish(Stage::Select, cfg, cfg.stage_seed("select"), &written)
}

pub fn load_selection(ctx: &Ctx, k: usize) -> anyhow::Result<Vec<SelectionRecord>> {
    read_jsonl(&ctx.work.input(Stage::Select, &selection_file(k))?)
}
