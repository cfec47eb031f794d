//! Patch preparation and the manifest/pixel helpers later stages share.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Context};
use cofcn_core::patches::{
    prepare_manifest, read_manifest, read_slide_index, write_manifest, LabelingRule, PatchManifest,
    PatchRecord, PatchRef, SetRole, SlideRef, SlideStore, SLIDE_INDEX,
};

use super::Ctx;
use crate::workdir::{MissingArtifact, Stage};

pub const SUPPORT: &str = "support.jsonl";
pub const QUERY: &str = "query.jsonl";
pub const TEST: &str = "test.jsonl";

pub fn slide_index(slides: &Path) -> anyhow::Result<Vec<SlideRef>> {
    if !slides.join(SLIDE_INDEX).exists() {
        return Err(MissingArtifact { stage: Stage::Synth, path: slides.join(SLIDE_INDEX) }.into());
    }
    Ok(read_slide_index(slides)?)
}

pub fn open_store(ctx: &Ctx) -> anyhow::Result<SlideStore> {
    let slides = slide_index(&ctx.cfg.paths.slides)?;
    Ok(SlideStore::new(&ctx.cfg.paths.slides, slides))
}

fn ids(slides: &[SlideRef], role: SetRole, centers: &[u8]) -> Vec<String> {
    let mut v: Vec<String> = slides
        .iter()
        .filter(|s| s.set_role == role && centers.contains(&s.center_id))
        .map(|s| s.slide_id.clone())
        .collect();
    v.sort();
    v
}

/// Builds the support, query and evaluation manifests.
pub fn prepare(ctx: &Ctx) -> anyhow::Result<()> {
    if ctx.opts.out.is_some() {
        return prepare_one(ctx);
    }
    let cfg = ctx.cfg;
    let slides = slide_index(&cfg.paths.slides)?;
    let dir = ctx.work.begin(Stage::Prepare)?;
    let mut store = SlideStore::new(&cfg.paths.slides, slides.clone());
    let train_opts = cfg.extract_options(LabelingRule::TrainMajority);
    let plan = [
        (SUPPORT, ids(&slides, SetRole::Support, &cfg.all_centers()), cfg.patches.support_drop_fraction, LabelingRule::TrainMajority),
        (QUERY, ids(&slides, SetRole::Query, &cfg.centers.train), cfg.patches.query_drop_fraction, LabelingRule::TrainMajority),
        (TEST, ids(&slides, SetRole::Test, &cfg.centers.test), 0.0, LabelingRule::EvalAnyPixel),
    ];
    let mut written = Vec::new();
    for (file, slide_ids, drop, rule) in plan {
        if slide_ids.is_empty() {
            bail!("no slides for {file}: check the slide index roles and center lists");
        }
        let opts = if rule == LabelingRule::TrainMajority { train_opts } else { cfg.extract_options(rule) };
        let seed = cfg.stage_seed(&format!("prepare/{file}"));
        let m = prepare_manifest(&mut store, &slide_ids, drop, seed, &opts)?;
        log::info!(
            "prepare: {file}: {} slides, {} lesion / {} non-lesion patches",
            slide_ids.len(),
            m.count(cofcn_core::patches::PatchLabel::Lesion),
            m.count(cofcn_core::patches::PatchLabel::NonLesion)
        );
        let path = dir.join(file);
        write_manifest(&path, &m)?;
        written.push(path);
    }
    ctx.work.finish(Stage::Prepare, cfg, cfg.stage_seed("prepare"), &written)
}

/// `prepare --out`: one manifest over every slide in the index.
fn prepare_one(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = ctx.cfg;
    let out = ctx.opts.out.as_ref().expect("checked by caller");
    let slides = slide_index(&cfg.paths.slides)?;
    let mut store = SlideStore::new(&cfg.paths.slides, slides.clone());
    let rule = ctx.opts.labeling.unwrap_or(LabelingRule::TrainMajority);
    let drop = ctx.opts.drop_fraction.unwrap_or(cfg.patches.support_drop_fraction);
    let seed = ctx.opts.seed.unwrap_or_else(|| cfg.stage_seed("prepare"));
    let mut all: Vec<String> = slides.iter().map(|s| s.slide_id.clone()).collect();
    all.sort();
    let m = prepare_manifest(&mut store, &all, drop, seed, &cfg.extract_options(rule))?;
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_manifest(out, &m)?;
    log::info!("prepare: {} patches -> {}", m.records.len(), out.display());
    Ok(())
}

pub struct Manifests {
    pub support: PatchManifest,
    pub query: PatchManifest,
    pub test: PatchManifest,
}

pub fn manifests(ctx: &Ctx) -> anyhow::Result<Manifests> {
    let read = |f: &str| -> anyhow::Result<PatchManifest> {
        let p = ctx.work.input(Stage::Prepare, f)?;
        read_manifest(&p).with_context(|| format!("reading {}", p.display()))
    };
    Ok(Manifests {
        support: read(SUPPORT)?,
        query: read(QUERY)?,
        test: read(TEST)?,
    })
}

impl Manifests {
    /// Training-side records of one center: support first, then queries.
    pub fn center_records(&self, center: u8) -> Vec<&PatchRecord> {
        self.support
            .records
            .iter()
            .chain(&self.query.records)
            .filter(|r| r.center_id == center)
            .collect()
    }

    pub fn by_ref(&self) -> HashMap<PatchRef, PatchRecord> {
        self.support
            .records
            .iter()
            .chain(&self.query.records)
            .map(|r| (r.patch_ref(), r.clone()))
            .collect()
    }
}
