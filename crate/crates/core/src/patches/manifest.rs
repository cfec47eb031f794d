use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LabelingRule, PatchManifest, PatchRecord};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct ManifestMeta {
    labeling_rule: LabelingRule,
    balance_seed: u64,
    drop_fraction: f64,
    records: usize,
}

fn meta_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta.json");
    PathBuf::from(p)
}

/// Writes one JSON record per line, plus a `<path>.meta.json` sidecar with
/// the labeling rule and balancing parameters.
pub fn write_manifest(path: &Path, manifest: &PatchManifest) -> Result<()> {
    manifest.validate()?;
    let mut out = BufWriter::new(File::create(path)?);
    for r in &manifest.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    let meta = ManifestMeta {
        labeling_rule: manifest.labeling_rule,
        balance_seed: manifest.balance_seed,
        drop_fraction: manifest.drop_fraction,
        records: manifest.records.len(),
    };
    let mut m = serde_json::to_vec_pretty(&meta)?;
    m.push(b'\n');
    std::fs::write(meta_path(path), m)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<PatchManifest> {
    let meta: ManifestMeta = serde_json::from_slice(&std::fs::read(meta_path(path))?)?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: PatchRecord = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidInput(format!("{}:{}: {e}", path.display(), n + 1))
        })?;
        records.push(r);
    }
    if records.len() != meta.records {
        return Err(Error::InvalidInput(format!(
            "{}: {} records but metadata says {}",
            path.display(),
            records.len(),
            meta.records
        )));
    }
    let manifest = PatchManifest {
        records,
        labeling_rule: meta.labeling_rule,
        balance_seed: meta.balance_seed,
        drop_fraction: meta.drop_fraction,
    };
    manifest.validate()?;
    Ok(manifest)
}
