//! Stage directories, provenance records and upstream checks.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, ProjectConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Prepare,
    TrainAe,
    Embed,
    FitPca,
    Cluster,
    Prototypes,
    Select,
    TrainCofcn,
    TrainUnet,
    Infer,
    Evaluate,
    Compare,
    Render,
}

impl Stage {
    pub const PIPELINE: [Stage; 13] = [
        Stage::Prepare,
        Stage::TrainAe,
        Stage::Embed,
        Stage::FitPca,
        Stage::Cluster,
        Stage::Prototypes,
        Stage::Select,
        Stage::TrainCofcn,
        Stage::TrainUnet,
        Stage::Infer,
        Stage::Evaluate,
        Stage::Compare,
        Stage::Render,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Prepare => "prepare",
            Stage::TrainAe => "train-ae",
            Stage::Embed => "embed",
            Stage::FitPca => "fit-pca",
            Stage::Cluster => "cluster",
            Stage::Prototypes => "prototypes",
            Stage::Select => "select",
            Stage::TrainCofcn => "train-cofcn",
            Stage::TrainUnet => "train-unet",
            Stage::Infer => "infer",
            Stage::Evaluate => "evaluate",
            Stage::Compare => "compare",
            Stage::Render => "render",
        }
    }

    /// Artifact layout version; bumped when a stage's outputs change shape.
    pub fn version(self) -> u32 {
        1
    }

    /// Stages whose artifacts this stage reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Synth | Stage::Prepare => &[],
            Stage::TrainAe => &[Stage::Prepare],
            Stage::Embed => &[Stage::Prepare, Stage::TrainAe],
            Stage::FitPca => &[Stage::Embed],
            Stage::Cluster => &[Stage::Prepare, Stage::FitPca],
            Stage::Prototypes => &[Stage::FitPca, Stage::Cluster],
            Stage::Select => &[Stage::Prepare, Stage::FitPca, Stage::Prototypes],
            Stage::TrainCofcn => &[Stage::Prepare, Stage::Select],
            Stage::TrainUnet => &[Stage::Prepare],
            Stage::Infer => &[Stage::Prepare, Stage::TrainAe, Stage::Prototypes, Stage::TrainCofcn, Stage::TrainUnet],
            Stage::Evaluate => &[Stage::Infer],
            Stage::Compare => &[Stage::Infer],
            Stage::Render => &[Stage::Infer],
        }
    }
}

impl Stage {
    /// Transitive upstream stages in pipeline order.
    pub fn ancestors(self) -> Vec<Stage> {
        let mut out: Vec<Stage> = Vec::new();
        let mut stack: Vec<Stage> = self.upstream().to_vec();
        while let Some(s) = stack.pop() {
            if !out.contains(&s) {
                out.push(s);
                stack.extend_from_slice(s.upstream());
            }
        }
        out.sort();
        out
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An upstream artifact is absent.
#[derive(Debug)]
pub struct MissingArtifact {
    pub stage: Stage,
    pub path: PathBuf,
}

impl fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "missing {}: run {} first", self.path.display(), self.stage)
    }
}

impl std::error::Error for MissingArtifact {}

/// Provenance written next to every stage's artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    /// Digest of each upstream stage record.
    pub upstream: BTreeMap<String, String>,
    pub artifacts: Vec<String>,
}

pub const RECORD_FILE: &str = "stage.json";

pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    pub fn new(root: &Path) -> Self {
        Workdir { root: root.to_path_buf() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, stage: Stage) -> PathBuf {
        self.root.join(format!("{}-v{}", stage.name(), stage.version()))
    }

    pub fn path(&self, stage: Stage, file: &str) -> PathBuf {
        self.dir(stage).join(file)
    }

    /// Path of an upstream artifact, or an error naming the stage to run.
    pub fn input(&self, stage: Stage, file: &str) -> anyhow::Result<PathBuf> {
        let p = self.path(stage, file);
        if !p.exists() {
            return Err(MissingArtifact { stage, path: p }.into());
        }
        Ok(p)
    }

    /// Checks every transitive upstream stage and names the earliest missing one.
    pub fn require(&self, stage: Stage) -> anyhow::Result<()> {
        for up in stage.ancestors() {
            self.input(up, RECORD_FILE)?;
        }
        Ok(())
    }

    /// Creates the stage directory.
    pub fn begin(&self, stage: Stage) -> anyhow::Result<PathBuf> {
        self.require(stage)?;
        let dir = self.dir(stage);
        std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(dir)
    }

    /// Writes the provenance record once a stage's artifacts are complete.
    pub fn finish(&self, stage: Stage, cfg: &ProjectConfig, seed: u64, artifacts: &[PathBuf]) -> anyhow::Result<()> {
        let mut upstream = BTreeMap::new();
        for &up in stage.upstream() {
            let bytes = std::fs::read(self.input(up, RECORD_FILE)?)?;
            upstream.insert(up.name().to_string(), hex(&Sha256::digest(&bytes)));
        }
        let dir = self.dir(stage);
        let mut names: Vec<String> = artifacts
            .iter()
            .map(|p| p.strip_prefix(&dir).unwrap_or(p).display().to_string())
            .collect();
        names.sort();
        let record = StageRecord {
            stage: stage.name().to_string(),
            version: stage.version(),
            config_hash: cfg.hash(),
            seed,
            upstream,
            artifacts: names,
        };
        write_json(&dir.join(RECORD_FILE), &record)
    }

    pub fn record(&self, stage: Stage) -> anyhow::Result<StageRecord> {
        read_json(&self.input(stage, RECORD_FILE)?)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("malformed {}", path.display()))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> anyhow::Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    for it in items {
        serde_json::to_writer(&mut out, it)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}
