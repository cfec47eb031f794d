use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::latent::Embedder;
use crate::model::{CoFcn, UNet};
use crate::patches::{LabelingRule, PatchManifest, PatchRecord, PatchRef, SlideStore};
use crate::selection::SelectorArtifact;
use crate::tensor::Tensor;

pub const PATCH: usize = 128;
pub const CENTRAL_LO: usize = 32;
pub const CENTRAL: usize = 64;
const BATCH: usize = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Min,
    Max,
}

/// Reduces a 128×128 probability map to one score over its central 64×64.
pub fn aggregate_central(seg_prob: &[f32], mode: Aggregation) -> Result<f64> {
    if seg_prob.len() != PATCH * PATCH {
        return invalid(format!("expected a {PATCH}x{PATCH} map, got {} values", seg_prob.len()));
    }
    let central = central_window(seg_prob);
    let v = match mode {
        Aggregation::Min => central.iter().copied().fold(f32::INFINITY, f32::min),
        Aggregation::Max => central.iter().copied().fold(f32::NEG_INFINITY, f32::max),
    };
    Ok(v as f64)
}

pub fn central_window(map: &[f32]) -> Vec<f32> {
    let mut out = Vec::with_capacity(CENTRAL * CENTRAL);
    for y in CENTRAL_LO..CENTRAL_LO + CENTRAL {
        out.extend_from_slice(&map[y * PATCH + CENTRAL_LO..y * PATCH + CENTRAL_LO + CENTRAL]);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchPrediction {
    pub slide_id: String,
    pub grid_x: u32,
    pub grid_y: u32,
    pub origin_px: (u32, u32),
    pub eval_label: u8,
    pub lesion_prob: f64,
}

impl PatchPrediction {
    pub fn patch_ref(&self) -> PatchRef {
        PatchRef {
            slide_id: self.slide_id.clone(),
            grid_x: self.grid_x,
            grid_y: self.grid_y,
        }
    }

    pub fn is_lesion(&self) -> bool {
        self.eval_label == 1
    }
}

/// Central 64×64 probabilities of one patch, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatTile {
    pub origin_px: (u32, u32),
    pub probs: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlidePrediction {
    pub slide_id: String,
    /// Sorted by patch reference.
    pub per_patch: Vec<PatchPrediction>,
    pub heatmap: Vec<HeatTile>,
}

impl SlidePrediction {
    pub fn scores(&self) -> Vec<f64> {
        self.per_patch.iter().map(|p| p.lesion_prob).collect()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.per_patch.iter().map(|p| p.is_lesion()).collect()
    }
}

/// Anything that maps a query batch (and optional support batch) to per-pixel
/// lesion probabilities `(N, 1, H, W)`.
pub trait SegmentationModel {
    /// Shots the model consumes; `None` for unconditioned models.
    fn k_shots(&self) -> Option<usize>;
    fn seg_prob(&self, query: &Tensor, support: Option<&Tensor>) -> Result<Tensor>;
}

impl SegmentationModel for CoFcn {
    fn k_shots(&self) -> Option<usize> {
        Some(self.config().k_shots)
    }

    fn seg_prob(&self, query: &Tensor, support: Option<&Tensor>) -> Result<Tensor> {
        let support = support.ok_or_else(|| {
            Error::InvalidInput("co-FCN inference needs a support batch".into())
        })?;
        Ok(self.forward(query, support)?.seg_prob)
    }
}

impl SegmentationModel for UNet {
    fn k_shots(&self) -> Option<usize> {
        None
    }

    fn seg_prob(&self, query: &Tensor, _support: Option<&Tensor>) -> Result<Tensor> {
        self.forward(query)
    }
}

/// Supplies the `3k`-channel support block for a query patch.
pub trait SupportProvider {
    fn support(&mut self, query: &PatchRecord, pixels: &[f32], k: usize) -> Result<Vec<f32>>;
}

/// Support selection backed by a fitted selector and the center's embedder.
pub struct SelectorSupport<'a> {
    pub selector: &'a SelectorArtifact,
    pub embedder: &'a Embedder,
    pub store: &'a mut SlideStore,
    /// Records of the support patches the selector's pools point to.
    pub records: HashMap<PatchRef, PatchRecord>,
    pub fallbacks: usize,
}

impl<'a> SelectorSupport<'a> {
    pub fn new(
        selector: &'a SelectorArtifact,
        embedder: &'a Embedder,
        store: &'a mut SlideStore,
        records: impl IntoIterator<Item = PatchRecord>,
    ) -> Self {
        SelectorSupport {
            selector,
            embedder,
            store,
            records: records.into_iter().map(|r| (r.patch_ref(), r)).collect(),
            fallbacks: 0,
        }
    }
}

impl SupportProvider for SelectorSupport<'_> {
    fn support(&mut self, query: &PatchRecord, pixels: &[f32], k: usize) -> Result<Vec<f32>> {
        let latent = self.embedder.embed(self.selector.center_id, pixels)?;
        let pick = self.selector.select(&query.patch_ref(), &latent, k)?;
        self.fallbacks += pick.fallbacks;
        let mut out = Vec::with_capacity(3 * k * PATCH * PATCH);
        for shot in &pick.shots {
            let rec = self
                .records
                .get(shot)
                .ok_or_else(|| Error::InvalidInput(format!("support patch {shot} not in manifest")))?;
            out.extend(self.store.patch_pixels(rec)?);
        }
        Ok(out)
    }
}

/// Scores every patch of one slide from an eval-labeled manifest.
pub fn predict_slide<M: SegmentationModel + ?Sized>(
    model: &M,
    store: &mut SlideStore,
    manifest: &PatchManifest,
    slide_id: &str,
    mut support: Option<&mut dyn SupportProvider>,
    aggregation: Aggregation,
) -> Result<SlidePrediction> {
    if manifest.labeling_rule != LabelingRule::EvalAnyPixel {
        return invalid("prediction needs a manifest labeled with the eval rule");
    }
    let k = model.k_shots();
    if k.is_some() && support.is_none() {
        return invalid(format!("missing selector artifacts for slide {slide_id}"));
    }
    let mut records: Vec<&PatchRecord> =
        manifest.records.iter().filter(|r| r.slide_id == slide_id).collect();
    records.sort_by_key(|r| r.patch_ref());
    records.dedup_by_key(|r| r.patch_ref());

    let mut pred = SlidePrediction {
        slide_id: slide_id.to_string(),
        ..Default::default()
    };
    for chunk in records.chunks(BATCH) {
        let mut q = Vec::with_capacity(chunk.len() * 3 * PATCH * PATCH);
        let mut s = Vec::new();
        for rec in chunk {
            let px = store.patch_pixels(rec)?;
            if let (Some(k), Some(provider)) = (k, support.as_deref_mut()) {
                s.extend(provider.support(rec, &px, k)?);
            }
            q.extend(px);
        }
        let n = chunk.len();
        let qt = Tensor::from_vec([n, 3, PATCH, PATCH], q)?;
        let st = match k {
            Some(k) => Some(Tensor::from_vec([n, 3 * k, PATCH, PATCH], s)?),
            None => None,
        };
        let prob = model.seg_prob(&qt, st.as_ref())?;
        for (i, rec) in chunk.iter().enumerate() {
            let map = prob.sample(i);
            pred.per_patch.push(PatchPrediction {
                slide_id: rec.slide_id.clone(),
                grid_x: rec.grid_x,
                grid_y: rec.grid_y,
                origin_px: rec.origin_px,
                eval_label: rec.label.is_lesion() as u8,
                lesion_prob: aggregate_central(map, aggregation)?,
            });
            pred.heatmap.push(HeatTile {
                origin_px: rec.origin_px,
                probs: central_window(map),
            });
        }
    }
    Ok(pred)
}

/// One JSON line per patch; probabilities carry 17 significant digits.
pub fn write_predictions(path: &Path, pred: &SlidePrediction) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for p in &pred.per_patch {
        writeln!(
            out,
            "{{\"slide_id\":{},\"grid_x\":{},\"grid_y\":{},\"origin_px\":[{},{}],\"eval_label\":{},\"lesion_prob\":{:.16e}}}",
            serde_json::to_string(&p.slide_id)?,
            p.grid_x,
            p.grid_y,
            p.origin_px.0,
            p.origin_px.1,
            p.eval_label,
            p.lesion_prob
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Reads per-patch records back; the heatmap is not part of this format.
pub fn read_predictions(path: &Path) -> Result<SlidePrediction> {
    let mut pred = SlidePrediction::default();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PatchPrediction = serde_json::from_str(&line)?;
        if !(0.0..=1.0).contains(&p.lesion_prob) || p.eval_label > 1 {
            return invalid(format!("{}:{}: malformed prediction", path.display(), i + 1));
        }
        if i == 0 {
            pred.slide_id = p.slide_id.clone();
        } else if p.slide_id != pred.slide_id {
            return invalid(format!("{}: mixes slides", path.display()));
        }
        pred.per_patch.push(p);
    }
    Ok(pred)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregation_examples() {
        let map = vec![0.9f32; PATCH * PATCH];
        assert_eq!(aggregate_central(&map, Aggregation::Min).unwrap(), 0.9f32 as f64);
        let mut map = vec![0.99f32; PATCH * PATCH];
        map[64 * PATCH + 64] = 0.1;
        map[0] = 0.0;
        assert_eq!(aggregate_central(&map, Aggregation::Min).unwrap(), 0.1f32 as f64);
        map[40 * PATCH + 90] = 1.0;
        map[127] = 0.0;
        assert_eq!(aggregate_central(&map, Aggregation::Max).unwrap(), 1.0);
        assert!(aggregate_central(&map[1..], Aggregation::Min).is_err());
    }

    #[test]
    fn predictions_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let pred = SlidePrediction {
            slide_id: "c3_p1_n0".into(),
            per_patch: (0..5)
                .map(|i| PatchPrediction {
                    slide_id: "c3_p1_n0".into(),
                    grid_x: i,
                    grid_y: 2,
                    origin_px: (128 * i, 256),
                    eval_label: (i % 2) as u8,
                    lesion_prob: (i as f64 + 0.1) / 7.3,
                })
                .collect(),
            heatmap: vec![],
        };
        write_predictions(&path, &pred).unwrap();
        let back = read_predictions(&path).unwrap();
        assert_eq!(back, pred);
        let text = std::fs::read_to_string(&path).unwrap();
        let first = text.lines().next().unwrap();
        let num = first.split("\"lesion_prob\":").nth(1).unwrap().trim_end_matches('}');
        let mantissa = num.split('e').next().unwrap();
        assert_eq!(mantissa.replace('.', "").len(), 17, "{num}");
    }
}
