//! Slide tiling, tissue filtering, patch labeling, class balancing and
//! synthetic slide generation.

mod balance;
mod grid;
mod labeling;
mod manifest;
mod slides;
pub mod synthetic;
mod tissue;

use serde::{Deserialize, Serialize};

pub use balance::balance_manifest;
pub use grid::{grid_patches, GridTile};
pub use labeling::{label_patch, label_patch_eval, label_patch_train, BinaryMask};
pub use manifest::{read_manifest, write_manifest};
pub use slides::{
    extract_slide_patches, image_patch, prepare_manifest, read_slide_index, write_slide_index,
    ExtractOptions, SlideStore, SLIDE_INDEX,
};
pub use synthetic::{generate_synthetic_slide, LesionSpec, SyntheticSlide, TextureParams};
pub use tissue::{
    gaussian_blur, hsv_to_rgb, max_blurred_saturation, rgb_to_hsv, tissue_filter, RgbRaster,
};

/// Side length of every patch, in pixels at 20x.
pub const PATCH_SIZE: usize = 128;

/// Rows/columns `32..96` of a patch: the axis-centred 64x64 window.
pub const CENTRAL: std::ops::Range<usize> = 32..96;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LesionClass {
    Negative,
    #[serde(rename = "ITC")]
    Itc,
    Micro,
    Macro,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PnStage {
    #[serde(rename = "pN0")]
    PN0,
    #[serde(rename = "pN0i+")]
    PN0ItcPositive,
    #[serde(rename = "pN1mi")]
    PN1Mi,
    #[serde(rename = "pN1")]
    PN1,
    #[serde(rename = "pN2")]
    PN2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetRole {
    Support,
    Query,
    Test,
}

/// One slide and its provenance. `mask_path` is present iff the slide is annotated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlideRef {
    pub slide_id: String,
    pub center_id: u8,
    pub patient_id: String,
    pub node_id: String,
    pub lesion_class: LesionClass,
    pub pn_stage: PnStage,
    pub set_role: SetRole,
    pub image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
}

impl SlideRef {
    pub fn validate(&self) -> crate::Result<()> {
        if self.center_id > 4 {
            return crate::error::invalid(format!(
                "slide {}: center id {} outside 0..=4",
                self.slide_id, self.center_id
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchLabel {
    NonLesion,
    Lesion,
}

impl PatchLabel {
    pub fn is_lesion(self) -> bool {
        self == PatchLabel::Lesion
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelingRule {
    /// Lesion iff at least half of the central window is annotated.
    TrainMajority,
    /// Lesion iff any central pixel is annotated.
    EvalAnyPixel,
}

/// Identity of a patch; ordering is lexicographic on (slide, x, y).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchRef {
    pub slide_id: String,
    pub grid_x: u32,
    pub grid_y: u32,
}

impl std::fmt::Display for PatchRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{},{}", self.slide_id, self.grid_x, self.grid_y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub slide_id: String,
    pub center_id: u8,
    pub set_role: SetRole,
    pub grid_x: u32,
    pub grid_y: u32,
    pub origin_px: (u32, u32),
    pub size_px: u32,
    pub label: PatchLabel,
    pub central_lesion_fraction: f64,
}

impl PatchRecord {
    pub fn patch_ref(&self) -> PatchRef {
        PatchRef {
            slide_id: self.slide_id.clone(),
            grid_x: self.grid_x,
            grid_y: self.grid_y,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchManifest {
    pub records: Vec<PatchRecord>,
    pub labeling_rule: LabelingRule,
    pub balance_seed: u64,
    pub drop_fraction: f64,
}

impl PatchManifest {
    pub fn new(records: Vec<PatchRecord>, labeling_rule: LabelingRule) -> Self {
        PatchManifest {
            records,
            labeling_rule,
            balance_seed: 0,
            drop_fraction: 0.0,
        }
    }

    pub fn count(&self, label: PatchLabel) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    /// Checks uniqueness by patch ref and the drop-fraction range.
    pub fn validate(&self) -> crate::Result<()> {
        if !(0.0..=1.0).contains(&self.drop_fraction) {
            return crate::error::invalid(format!(
                "drop fraction {} outside [0, 1]",
                self.drop_fraction
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for r in &self.records {
            if !seen.insert((r.slide_id.as_str(), r.grid_x, r.grid_y)) {
                return crate::error::invalid(format!(
                    "duplicate patch {}",
                    r.patch_ref()
                ));
            }
        }
        Ok(())
    }
}
