//! Project configuration: one TOML file with a section per pipeline module.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cofcn_core::evaluation::Aggregation;
use cofcn_core::latent::AutoencoderConfig;
use cofcn_core::model::CoFcnConfig;
use cofcn_core::patches::{ExtractOptions, LabelingRule, TextureParams};
use cofcn_core::selection::{GmmOptions, ALLOWED_SHOTS};
use cofcn_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct ProjectConfig {
    pub seed: u64,
    pub paths: Paths,
    pub centers: Centers,
    pub synthetic: SyntheticSection,
    pub patches: PatchSection,
    pub autoencoder: AutoencoderSection,
    pub selection: SelectionSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub slides: PathBuf,
    pub workdir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Centers {
    pub train: Vec<u8>,
    pub test: Vec<u8>,
}

/// Slide generator settings for the `synth` stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub width: usize,
    pub height: usize,
    /// Annotated support slides per center.
    pub support_slides: usize,
    /// Annotated query slides per training center.
    pub query_slides: usize,
    /// Evaluation slides per test center.
    pub test_slides: usize,
    pub lesion_count: usize,
    pub lesion_radius: (f64, f64),
    /// Stain gain applied to every test-center slide.
    pub test_stain_gain: [f32; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchSection {
    pub blur_sigma: f64,
    pub tissue_threshold: f64,
    pub support_drop_fraction: f64,
    pub query_drop_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderSection {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub early_stop_patience: usize,
    pub train_fraction: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    pub components: usize,
    pub microcluster_dim: usize,
    pub gmm_tol: f64,
    pub gmm_max_iter: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// One co-FCN is trained per shot count.
    pub shots: Vec<usize>,
    pub encoder_channels: [usize; 4],
    /// `(D1, D2, D3, D4)`
    pub decoder_channels: [usize; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub lesion_weight: f64,
    pub pretext_weight: f64,
    pub patience: usize,
    pub train_fraction: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub aggregation: Aggregation,
    pub threshold: f64,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            slides: PathBuf::from("slides"),
            workdir: PathBuf::from("work"),
        }
    }
}

impl Default for Centers {
    fn default() -> Self {
        Centers {
            train: vec![0, 1, 2],
            test: vec![3, 4],
        }
    }
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            width: 1024,
            height: 1024,
            support_slides: 1,
            query_slides: 2,
            test_slides: 2,
            lesion_count: 3,
            lesion_radius: (50.0, 90.0),
            test_stain_gain: [0.90, 1.06, 0.94],
        }
    }
}

impl Default for PatchSection {
    fn default() -> Self {
        let e = ExtractOptions::default();
        PatchSection {
            blur_sigma: e.blur_sigma,
            tissue_threshold: e.tissue_threshold,
            support_drop_fraction: 0.85,
            query_drop_fraction: 0.95,
        }
    }
}

impl Default for AutoencoderSection {
    fn default() -> Self {
        let a = AutoencoderConfig::default();
        AutoencoderSection {
            learning_rate: a.learning_rate,
            adam_beta1: a.adam_beta1,
            adam_beta2: a.adam_beta2,
            early_stop_patience: a.early_stop_patience,
            train_fraction: a.train_fraction,
            max_epochs: a.max_epochs,
            batch_size: a.batch_size,
        }
    }
}

impl Default for SelectionSection {
    fn default() -> Self {
        let g = GmmOptions::default();
        SelectionSection {
            components: g.n_components,
            microcluster_dim: 20,
            gmm_tol: g.tol,
            gmm_max_iter: g.max_iter,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = CoFcnConfig::default();
        ModelSection {
            shots: vec![8],
            encoder_channels: m.encoder_channels,
            decoder_channels: m.decoder_channels,
        }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingSection {
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            lesion_weight: t.lesion_weight,
            pretext_weight: t.pretext_weight,
            patience: t.patience,
            train_fraction: t.train_fraction,
            max_epochs: t.max_epochs,
            batch_size: t.batch_size,
        }
    }
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            aggregation: Aggregation::Min,
            threshold: 0.75,
        }
    }
}

/// Parses a `section.key=value` override; the value is read as a TOML value
/// and falls back to a bare string.
fn apply_override(table: &mut toml::Table, spec: &str) -> anyhow::Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .with_context(|| format!("override {spec:?} is not of the form key=value"))?;
    let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("override {key}: {p} is not a section"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl ProjectConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> anyhow::Result<Self> {
        let mut table: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        ProjectConfig::deserialize(table).context("config does not match the expected schema")
    }

    /// Loads a config file; relative paths resolve against its directory.
    /// Without a file the defaults apply, relative to the working directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return ProjectConfig::from_toml("", overrides);
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = ProjectConfig::from_toml(&text, overrides)
            .with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.slides, &mut cfg.paths.workdir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Per-stage seed derived from the global seed and a stage label.
    pub fn stage_seed(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }

    pub fn all_centers(&self) -> Vec<u8> {
        let set: BTreeSet<u8> = self.centers.train.iter().chain(&self.centers.test).copied().collect();
        set.into_iter().collect()
    }

    pub fn extract_options(&self, rule: LabelingRule) -> ExtractOptions {
        ExtractOptions {
            blur_sigma: self.patches.blur_sigma,
            tissue_threshold: self.patches.tissue_threshold,
            rule,
        }
    }

    pub fn autoencoder_config(&self, seed: u64) -> AutoencoderConfig {
        let a = &self.autoencoder;
        AutoencoderConfig {
            learning_rate: a.learning_rate,
            adam_beta1: a.adam_beta1,
            adam_beta2: a.adam_beta2,
            early_stop_patience: a.early_stop_patience,
            train_fraction: a.train_fraction,
            max_epochs: a.max_epochs,
            batch_size: a.batch_size,
            seed,
            ..AutoencoderConfig::default()
        }
    }

    pub fn gmm_options(&self, seed: u64) -> GmmOptions {
        GmmOptions {
            n_components: self.selection.components,
            tol: self.selection.gmm_tol,
            max_iter: self.selection.gmm_max_iter,
            seed,
        }
    }

    /// Network shape for `k` shots (`k` is ignored by the U-Net).
    pub fn network_config(&self, k: usize, seed: u64) -> CoFcnConfig {
        CoFcnConfig {
            k_shots: k,
            encoder_channels: self.model.encoder_channels,
            decoder_channels: self.model.decoder_channels,
            seed,
        }
    }

    pub fn train_config(&self, k: usize, seed: u64) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            lesion_weight: t.lesion_weight,
            pretext_weight: t.pretext_weight,
            k_shots: k,
            patience: t.patience,
            train_fraction: t.train_fraction,
            seed,
            max_epochs: t.max_epochs,
            batch_size: t.batch_size,
        }
    }

    pub fn test_texture(&self) -> TextureParams {
        TextureParams {
            stain_gain: self.synthetic.test_stain_gain,
            ..TextureParams::default()
        }
    }
}

pub fn derive_seed(global: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn in_open_unit(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

/// Every rule the config breaks; empty when valid.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail these checks
pub fn validate_config(cfg: &ProjectConfig) -> Vec<String> {
    let mut v = Vec::new();
    let c = &cfg.centers;
    if c.train.is_empty() {
        v.push("centers.train is empty".to_string());
    }
    if c.test.is_empty() {
        v.push("centers.test is empty".to_string());
    }
    let overlap: BTreeSet<u8> = c.train.iter().filter(|x| c.test.contains(x)).copied().collect();
    if !overlap.is_empty() {
        v.push(format!(
            "centers {overlap:?} are in both centers.train and centers.test; test and training slides must be acquired by separate medical centers"
        ));
    }
    if cfg.model.shots.is_empty() {
        v.push("model.shots is empty".to_string());
    }
    for &k in &cfg.model.shots {
        if !ALLOWED_SHOTS.contains(&k) {
            v.push(format!("model.shots: k={k} is not one of 1, 2, 4, 8"));
        }
    }
    let t = &cfg.training;
    if !(t.lesion_weight > 0.0) {
        v.push(format!("training.lesion_weight must be > 0, got {}", t.lesion_weight));
    }
    if !(t.pretext_weight > 0.0) {
        v.push(format!("training.pretext_weight must be > 0, got {}", t.pretext_weight));
    }
    if !(t.learning_rate > 0.0) {
        v.push("training.learning_rate must be > 0".to_string());
    }
    if !in_open_unit(t.train_fraction) {
        v.push(format!("training.train_fraction {} outside (0, 1)", t.train_fraction));
    }
    let a = &cfg.autoencoder;
    if !(a.learning_rate > 0.0) {
        v.push("autoencoder.learning_rate must be > 0".to_string());
    }
    if !in_open_unit(a.train_fraction) {
        v.push(format!("autoencoder.train_fraction {} outside (0, 1)", a.train_fraction));
    }
    for (name, b) in [
        ("training.adam_beta1", t.adam_beta1),
        ("training.adam_beta2", t.adam_beta2),
        ("autoencoder.adam_beta1", a.adam_beta1),
        ("autoencoder.adam_beta2", a.adam_beta2),
    ] {
        if !(0.0..1.0).contains(&b) {
            v.push(format!("{name} {b} outside [0, 1)"));
        }
    }
    for (name, n) in [
        ("training.patience", t.patience),
        ("training.max_epochs", t.max_epochs),
        ("training.batch_size", t.batch_size),
        ("autoencoder.early_stop_patience", a.early_stop_patience),
        ("autoencoder.max_epochs", a.max_epochs),
        ("autoencoder.batch_size", a.batch_size),
        ("selection.components", cfg.selection.components),
        ("selection.microcluster_dim", cfg.selection.microcluster_dim),
        ("selection.gmm_max_iter", cfg.selection.gmm_max_iter),
    ] {
        if n == 0 {
            v.push(format!("{name} must be at least 1"));
        }
    }
    let p = &cfg.patches;
    for (name, f) in [
        ("patches.support_drop_fraction", p.support_drop_fraction),
        ("patches.query_drop_fraction", p.query_drop_fraction),
        ("patches.tissue_threshold", p.tissue_threshold),
        ("evaluation.threshold", cfg.evaluation.threshold),
    ] {
        if !(0.0..=1.0).contains(&f) {
            v.push(format!("{name} {f} outside [0, 1]"));
        }
    }
    if !(p.blur_sigma >= 0.0) {
        v.push("patches.blur_sigma must be >= 0".to_string());
    }
    if cfg.model.encoder_channels.iter().chain(&cfg.model.decoder_channels).any(|&c| c == 0) {
        v.push("model channel widths must be positive".to_string());
    }
    let s = &cfg.synthetic;
    if !s.width.is_multiple_of(128) || !s.height.is_multiple_of(128) || s.width == 0 || s.height == 0 {
        v.push(format!("synthetic slide size {}x{} is not a positive multiple of 128", s.width, s.height));
    }
    v
}

pub fn ensure_valid(cfg: &ProjectConfig) -> anyhow::Result<()> {
    let v = validate_config(cfg);
    if v.is_empty() {
        Ok(())
    } else {
        bail!(crate::ValidationFailure(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let cfg = ProjectConfig::default();
        assert!(validate_config(&cfg).is_empty());
        let back = ProjectConfig::from_toml(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn violations() {
        let mut cfg = ProjectConfig::default();
        cfg.centers.test = vec![2, 3];
        cfg.model.shots = vec![2, 3];
        cfg.training.pretext_weight = 0.0;
        cfg.patches.query_drop_fraction = 1.5;
        let v = validate_config(&cfg);
        assert_eq!(v.len(), 4, "{v:?}");
        assert!(v[0].contains("separate medical centers"));
        assert!(v[1].contains("k=3"));
    }

    #[test]
    fn overrides() {
        let cfg = ProjectConfig::from_toml(
            "seed = 3\n[model]\nshots = [1]\n",
            &["model.shots=[2, 4]".into(), "paths.workdir=out".into(), "seed=9".into()],
        )
        .unwrap();
        assert_eq!(cfg.model.shots, vec![2, 4]);
        assert_eq!(cfg.paths.workdir, PathBuf::from("out"));
        assert_eq!(cfg.seed, 9);
        assert!(ProjectConfig::from_toml("[model]\nbogus = 1\n", &[]).is_err());
        assert!(ProjectConfig::from_toml("", &["noequals".into()]).is_err());
    }

    #[test]
    fn stage_seeds_differ_and_repeat() {
        assert_eq!(derive_seed(1, "train-ae"), derive_seed(1, "train-ae"));
        assert_ne!(derive_seed(1, "train-ae"), derive_seed(1, "embed"));
        assert_ne!(derive_seed(1, "train-ae"), derive_seed(2, "train-ae"));
    }
}
