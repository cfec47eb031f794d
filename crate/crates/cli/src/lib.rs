//! `cofcn` pipeline driver: one subcommand per stage, artifacts under the
//! configured work directory.

pub mod config;
pub mod stages;
pub mod workdir;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cofcn_core::patches::LabelingRule;

pub use config::{validate_config, ProjectConfig};
use stages::{Ctx, StageOptions};
pub use workdir::{MissingArtifact, Stage, Workdir};

/// The config breaks one or more rules.
#[derive(Debug)]
pub struct ValidationFailure(pub Vec<String>);

impl fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config:")?;
        for v in &self.0 {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationFailure {}

#[derive(Parser, Debug)]
#[command(name = "cofcn", version, about = "Few-shot conditional segmentation pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Project config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Config override, `section.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Labeling {
    Train,
    Eval,
}

/// Optimizer and loss settings shared by both trainers.
#[derive(Args, Debug, Default)]
pub struct TrainFlags {
    /// Lesion class weight.
    #[arg(long)]
    pub wl: Option<f64>,
    /// Pretext loss weight.
    #[arg(long)]
    pub w: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
}

impl TrainFlags {
    fn overrides(&self, out: &mut Vec<String>) {
        let pairs = [
            ("training.lesion_weight", self.wl.map(|v| format!("{v:?}"))),
            ("training.pretext_weight", self.w.map(|v| format!("{v:?}"))),
            ("training.learning_rate", self.lr.map(|v| format!("{v:?}"))),
            ("training.patience", self.patience.map(|v| v.to_string())),
        ];
        for (key, v) in pairs {
            if let Some(v) = v {
                out.push(format!("{key}={v}"));
            }
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate annotated synthetic slides into the slide directory.
    Synth,
    /// Tile, filter, label and balance patches into manifests.
    Prepare {
        #[arg(long)]
        slides: Option<PathBuf>,
        /// Write a single manifest over all slides here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        drop_fraction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        labeling: Option<Labeling>,
    },
    /// Train one autoencoder per center.
    TrainAe {
        #[arg(long)]
        center: Option<u8>,
    },
    /// Encode training-side patches to 8-D latent vectors.
    Embed {
        #[arg(long)]
        center: Option<u8>,
    },
    /// Fit the 3-D PCA per center.
    FitPca {
        #[arg(long)]
        center: Option<u8>,
    },
    /// Fit the per-center GMM and lesion prevalences.
    Cluster {
        #[arg(long)]
        center: Option<u8>,
        #[arg(long)]
        components: Option<usize>,
    },
    /// Build prototype pools and the selector artifact.
    Prototypes {
        #[arg(long)]
        center: Option<u8>,
        #[arg(long)]
        microcluster_dim: Option<usize>,
    },
    /// Pick support shots for every training query.
    Select {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train one co-FCN per shot count.
    TrainCofcn {
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Train the baseline U-Net.
    TrainUnet {
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Predict every evaluation slide.
    Infer {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Per-slide AUC, DeLong interval and partial AUC.
    Evaluate,
    /// co-FCN vs U-Net per slide and shot count.
    Compare,
    /// Heatmap overlays of the predictions.
    Render {
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Every stage from prepare to render.
    All {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Check the config and print violations.
    Validate,
}

fn stage_of(cmd: &Command) -> Option<Stage> {
    Some(match cmd {
        Command::Synth => Stage::Synth,
        Command::Prepare { .. } => Stage::Prepare,
        Command::TrainAe { .. } => Stage::TrainAe,
        Command::Embed { .. } => Stage::Embed,
        Command::FitPca { .. } => Stage::FitPca,
        Command::Cluster { .. } => Stage::Cluster,
        Command::Prototypes { .. } => Stage::Prototypes,
        Command::Select { .. } => Stage::Select,
        Command::TrainCofcn { .. } => Stage::TrainCofcn,
        Command::TrainUnet { .. } => Stage::TrainUnet,
        Command::Infer { .. } => Stage::Infer,
        Command::Evaluate => Stage::Evaluate,
        Command::Compare => Stage::Compare,
        Command::Render { .. } => Stage::Render,
        Command::All { .. } | Command::Validate => return None,
    })
}

/// Folds stage flags into config overrides and stage options.
fn split_flags(cmd: &Command, overrides: &mut Vec<String>) -> StageOptions {
    let mut o = StageOptions::default();
    match cmd {
        Command::Prepare { slides, out, drop_fraction, seed, labeling } => {
            if let Some(s) = slides {
                overrides.push(format!("paths.slides={}", toml_str(&s.display().to_string())));
            }
            o.out = out.clone();
            o.drop_fraction = *drop_fraction;
            o.seed = *seed;
            o.labeling = labeling.map(|l| match l {
                Labeling::Train => LabelingRule::TrainMajority,
                Labeling::Eval => LabelingRule::EvalAnyPixel,
            });
        }
        Command::TrainAe { center } | Command::Embed { center } | Command::FitPca { center } => o.center = *center,
        Command::Cluster { center, components } => {
            o.center = *center;
            if let Some(n) = components {
                overrides.push(format!("selection.components={n}"));
            }
        }
        Command::Prototypes { center, microcluster_dim } => {
            o.center = *center;
            if let Some(n) = microcluster_dim {
                overrides.push(format!("selection.microcluster_dim={n}"));
            }
        }
        Command::Select { k } | Command::All { k } => {
            if let Some(k) = k {
                overrides.push(format!("model.shots=[{k}]"));
            }
        }
        Command::TrainCofcn { k, train } => {
            if let Some(k) = k {
                overrides.push(format!("model.shots=[{k}]"));
            }
            train.overrides(overrides);
        }
        Command::TrainUnet { train } => train.overrides(overrides),
        Command::Infer { model, k } => {
            o.model = model.clone();
            if let Some(k) = k {
                overrides.push(format!("model.shots=[{k}]"));
            }
        }
        Command::Render { threshold } => {
            if let Some(t) = threshold {
                overrides.push(format!("evaluation.threshold={t}"));
            }
        }
        Command::Synth | Command::Evaluate | Command::Compare | Command::Validate => {}
    }
    o
}

fn toml_str(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

pub fn run_stage(stage: Stage, cfg: &ProjectConfig, opts: StageOptions) -> anyhow::Result<()> {
    config::ensure_valid(cfg)?;
    let ctx = Ctx::new(cfg, opts);
    log::info!("{stage}: config {} seed {}", cfg.hash(), cfg.stage_seed(stage.name()));
    match stage {
        Stage::Synth => stages::synth::run(&ctx),
        Stage::Prepare => stages::data::prepare(&ctx),
        Stage::TrainAe => stages::latent::train_ae(&ctx),
        Stage::Embed => stages::latent::embed(&ctx),
        Stage::FitPca => stages::latent::fit_pca_stage(&ctx),
        Stage::Cluster => stages::selection::cluster(&ctx),
        Stage::Prototypes => stages::selection::prototypes(&ctx),
        Stage::Select => stages::selection::select(&ctx),
        Stage::TrainCofcn => stages::training::train_cofcn_stage(&ctx),
        Stage::TrainUnet => stages::training::train_unet_stage(&ctx),
        Stage::Infer => stages::inference::infer(&ctx),
        Stage::Evaluate => stages::inference::evaluate(&ctx),
        Stage::Compare => stages::inference::compare(&ctx),
        Stage::Render => stages::inference::render(&ctx),
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut overrides = cli.overrides.clone();
    let opts = split_flags(&cli.command, &mut overrides);
    let cfg = ProjectConfig::load(cli.config.as_deref(), &overrides).map_err(|e| ValidationFailure(vec![format!("{e:#}")]))?;
    match &cli.command {
        Command::Validate => {
            config::ensure_valid(&cfg)?;
            println!("config ok ({})", cfg.hash());
            Ok(())
        }
        Command::All { .. } => {
            for stage in Stage::PIPELINE {
                run_stage(stage, &cfg, opts.clone())?;
            }
            Ok(())
        }
        cmd => run_stage(stage_of(cmd).expect("single-stage command"), &cfg, opts),
    }
}

/// Exit status: 0 success, 2 invalid config, 1 any other failure.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<ValidationFailure>().is_some() {
        2
    } else {
        1
    }
}

/// Parses arguments and runs; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
