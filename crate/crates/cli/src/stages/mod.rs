pub mod data;
pub mod inference;
pub mod latent;
pub mod selection;
pub mod synth;
pub mod training;

use std::path::PathBuf;

use cofcn_core::patches::LabelingRule;

use crate::config::ProjectConfig;
use crate::workdir::Workdir;

/// Stage flags that do not map onto config keys.
#[derive(Clone, Debug, Default)]
pub struct StageOptions {
    /// Restricts per-center stages to one center.
    pub center: Option<u8>,
    /// Explicit checkpoint for `infer`.
    pub model: Option<PathBuf>,
    /// Standalone `prepare`: write one manifest here instead of the stage layout.
    pub out: Option<PathBuf>,
    pub labeling: Option<LabelingRule>,
    pub drop_fraction: Option<f64>,
    pub seed: Option<u64>,
}

pub struct Ctx<'a> {
    pub cfg: &'a ProjectConfig,
    pub work: Workdir,
    pub opts: StageOptions,
}

impl<'a> Ctx<'a> {
    pub fn new(cfg: &'a ProjectConfig, opts: StageOptions) -> Self {
        Ctx {
            cfg,
            work: Workdir::new(&cfg.paths.workdir),
            opts,
        }
    }

    /// Centers a per-center stage processes.
    pub fn centers(&self, from: &[u8]) -> Vec<u8> {
        from.iter()
            .copied()
            .filter(|c| self.opts.center.is_none_or(|only| only == *c))
            .collect()
    }
}
