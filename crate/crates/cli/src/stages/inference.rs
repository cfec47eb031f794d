//! Test-slide inference, ROC evaluation, model comparison and heatmaps.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use anyhow::{bail, Context};
use cofcn_core::evaluation::{
    compare_report, evaluate_prediction, heatmap_layer, predict_slide, read_predictions, render_evaluation,
    render_heatmap, write_predictions, EvaluationRow, ProbabilityMap, SelectorSupport, SlidePrediction,
};
use cofcn_core::model::{read_network_meta, CoFcn, NetworkKind, UNet};
use cofcn_core::patches::PatchRecord;
use serde::{Deserialize, Serialize};

use super::data::{manifests, open_store};
use super::latent::embedder;
use super::selection::load_selector;
use super::training::{cofcn_file, UNET_CKPT};
use super::Ctx;
use crate::workdir::{read_json, write_json, Stage};

pub const INDEX: &str = "index.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub kind: NetworkKind,
    pub k: Option<usize>,
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferIndex {
    pub models: Vec<ModelEntry>,
    pub slides: Vec<String>,
    pub dims: BTreeMap<String, (u32, u32)>,
}

fn entry(path: PathBuf) -> anyhow::Result<ModelEntry> {
    let meta = read_network_meta(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(match meta.kind {
        NetworkKind::Unet => ModelEntry { name: "unet".into(), kind: meta.kind, k: None, checkpoint: path },
        NetworkKind::Cofcn => {
            let k = meta.config.k_shots;
            ModelEntry { name: format!("cofcn_k{k}"), kind: meta.kind, k: Some(k), checkpoint: path }
        }
    })
}

pub fn infer(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = ctx.cfg;
    let dir = ctx.work.begin(Stage::Infer)?;
    let m = manifests(ctx)?;
    let mut store = open_store(ctx)?;

    let models = match &ctx.opts.model {
        Some(p) => vec![entry(p.clone())?],
        None => {
            let mut v = vec![entry(ctx.work.input(Stage::TrainUnet, UNET_CKPT)?)?];
            for &k in &cfg.model.shots {
                v.push(entry(ctx.work.input(Stage::TrainCofcn, &cofcn_file(k))?)?);
            }
            v
        }
    };

    let slides: Vec<String> = m.test.records.iter().map(|r| r.slide_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    if slides.is_empty() {
        bail!("the evaluation manifest is empty");
    }
    let mut center_of = HashMap::new();
    let mut dims = BTreeMap::new();
    for s in &slides {
        center_of.insert(s.clone(), store.slide(s)?.center_id);
        dims.insert(s.clone(), store.image(s)?.dimensions());
    }
    let centers: Vec<u8> = center_of.values().copied().collect::<BTreeSet<_>>().into_iter().collect();

    let needs_selector = models.iter().any(|e| e.kind == NetworkKind::Cofcn);
    let mut selectors = HashMap::new();
    let mut support: HashMap<u8, Vec<PatchRecord>> = HashMap::new();
    let emb = if needs_selector {
        for &c in &centers {
            selectors.insert(c, load_selector(ctx, c)?);
            support.insert(c, m.support.records.iter().filter(|r| r.center_id == c).cloned().collect());
        }
        Some(embedder(ctx, &centers)?)
    } else {
        None
    };

    let agg = cfg.evaluation.aggregation;
    let mut written = Vec::new();
    for e in &models {
        let mdir = dir.join(&e.name);
        std::fs::create_dir_all(&mdir)?;
        log::info!("infer: {} on {} slides", e.name, slides.len());
        let mut preds = Vec::with_capacity(slides.len());
        match e.kind {
            NetworkKind::Unet => {
                let (net, _) = UNet::load(&e.checkpoint, None)?;
                for s in &slides {
                    preds.push(predict_slide(&net, &mut store, &m.test, s, None, agg)?);
                }
            }
            NetworkKind::Cofcn => {
                let (net, _) = CoFcn::load(&e.checkpoint, None)?;
                let emb = emb.as_ref().expect("loaded for co-FCN models");
                let mut support_store = open_store(ctx)?;
                for s in &slides {
                    let c = center_of[s];
                    let mut provider = SelectorSupport::new(&selectors[&c], emb, &mut support_store, support[&c].clone());
                    preds.push(predict_slide(&net, &mut store, &m.test, s, Some(&mut provider), agg)?);
                    if provider.fallbacks > 0 {
                        log::warn!("infer: {s}: {} shots fell back to the opposite-class pool", provider.fallbacks);
                    }
                }
            }
        }
        for p in &preds {
            let (w, h) = dims[&p.slide_id];
            let jl = mdir.join(format!("{}.jsonl", p.slide_id));
            write_predictions(&jl, p)?;
            let png = mdir.join(format!("{}_prob.png", p.slide_id));
            ProbabilityMap::from_prediction(p, w as usize, h as usize)?.save(&png)?;
            written.extend([jl, png]);
        }
    }
    let index = dir.join(INDEX);
    write_json(&index, &InferIndex { models, slides, dims })?;
    written.push(index);
    ctx.work.finish(Stage::Infer, cfg, cfg.stage_seed("infer"), &written)
}

fn load_index(ctx: &Ctx) -> anyhow::Result<InferIndex> {
    read_json(&ctx.work.input(Stage::Infer, INDEX)?)
}

fn load_preds(ctx: &Ctx, model: &str, slides: &[String]) -> anyhow::Result<Vec<SlidePrediction>> {
    slides
        .iter()
        .map(|s| Ok(read_predictions(&ctx.work.input(Stage::Infer, &format!("{model}/{s}.jsonl"))?)?))
        .collect()
}

pub fn evaluate(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = ctx.cfg;
    let dir = ctx.work.begin(Stage::Evaluate)?;
    let index = load_index(ctx)?;
    let mut rows = Vec::new();
    for e in &index.models {
        for p in load_preds(ctx, &e.name, &index.slides)? {
            rows.push(EvaluationRow {
                slide_id: p.slide_id.clone(),
                model: e.name.clone(),
                n_patches: p.per_patch.len(),
                roc: evaluate_prediction(&p)?,
            });
        }
    }
    let (text, tsv) = render_evaluation(&rows);
    let t = dir.join("evaluation.txt");
    let d = dir.join("evaluation.tsv");
    std::fs::write(&t, &text)?;
    std::fs::write(&d, &tsv)?;
    eprint!("{text}");
    ctx.work.finish(Stage::Evaluate, cfg, cfg.stage_seed("evaluate"), &[t, d])
}

pub fn compare(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = ctx.cfg;
    let dir = ctx.work.begin(Stage::Compare)?;
    let index = load_index(ctx)?;
    let unet = index
        .models
        .iter()
        .find(|e| e.kind == NetworkKind::Unet)
        .context("no U-Net predictions: run infer without --model (or with the U-Net checkpoint) first")?;
    let base = load_preds(ctx, &unet.name, &index.slides)?;
    let mut cofcn = Vec::new();
    for e in index.models.iter().filter(|e| e.kind == NetworkKind::Cofcn) {
        cofcn.push((e.k.expect("co-FCN entries carry k"), load_preds(ctx, &e.name, &index.slides)?));
    }
    if cofcn.is_empty() {
        bail!("no co-FCN predictions to compare: run infer first");
    }
    let report = compare_report(&cofcn, &base)?;
    let t = dir.join("compare.txt");
    let d = dir.join("compare.tsv");
    let j = dir.join("compare.json");
    std::fs::write(&t, report.to_text())?;
    std::fs::write(&d, report.to_tsv())?;
    write_json(&j, &report)?;
    eprint!("{}", report.to_text());
    ctx.work.finish(Stage::Compare, cfg, cfg.stage_seed("compare"), &[t, d, j])
}

pub fn render(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = ctx.cfg;
    let dir = ctx.work.begin(Stage::Render)?;
    let index = load_index(ctx)?;
    let mut store = open_store(ctx)?;
    let t = cfg.evaluation.threshold;
    let mut written = Vec::new();
    for e in &index.models {
        let mdir = dir.join(&e.name);
        std::fs::create_dir_all(&mdir)?;
        for s in &index.slides {
            let map = ProbabilityMap::load(&ctx.work.input(Stage::Infer, &format!("{}/{s}_prob.png", e.name))?)?;
            let out = render_heatmap(&map, store.image(s)?, t)?;
            let composite = mdir.join(format!("{s}.png"));
            out.save(&composite)?;
            let overlay = mdir.join(format!("{s}_overlay.png"));
            heatmap_layer(&map, t).save(&overlay)?;
            written.extend([composite, overlay]);
        }
    }
    log::info!("render: {} images at threshold {t}", written.len());
    ctx.work.finish(Stage::Render, cfg, cfg.stage_seed("render"), &written)
}
