//! Unsupervised patch embedding: per-center autoencoder, spatially averaged
//! latent vectors, PCA to three dimensions.

mod autoencoder;
mod pca;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use autoencoder::{
    reconstruction_loss, train_autoencoder, Autoencoder, AutoencoderCache, AutoencoderConfig,
    AutoencoderMeta, TrainedAutoencoder, AUTOENCODER_SCHEMA,
};
pub use pca::{fit_pca, PcaModel};

use crate::error::{invalid, Error, Result};
use crate::patches::{PatchRef, PATCH_SIZE};
use crate::tensor::Tensor;

pub const LATENT_DIM: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentVector {
    pub patch_ref: PatchRef,
    pub values: [f64; LATENT_DIM],
}

/// Per-channel spatial mean of one `C x H x W` latent map.
pub fn spatial_mean(latent: &[f32], channels: usize) -> Result<[f64; LATENT_DIM]> {
    if channels != LATENT_DIM || latent.is_empty() || !latent.len().is_multiple_of(channels) {
        return invalid(format!(
            "latent map of {} values with {channels} channels",
            latent.len()
        ));
    }
    let hw = latent.len() / channels;
    let mut out = [0.0; LATENT_DIM];
    for (o, plane) in out.iter_mut().zip(latent.chunks(hw)) {
        *o = plane.iter().map(|&v| v as f64).sum::<f64>() / hw as f64;
    }
    if out.iter().any(|v| !v.is_finite()) {
        return invalid("latent map is not finite");
    }
    Ok(out)
}

/// Autoencoders keyed by center. Embedding a patch with another center's
/// weights is refused.
#[derive(Default)]
pub struct Embedder {
    models: BTreeMap<u8, Autoencoder>,
}

impl Embedder {
    pub fn new() -> Self {
        Embedder::default()
    }

    pub fn insert(&mut self, center_id: u8, model: Autoencoder) {
        self.models.insert(center_id, model);
    }

    /// Loads a checkpoint; its recorded center must equal `center_id`.
    pub fn load(&mut self, center_id: u8, path: &Path) -> Result<()> {
        let (model, meta) = Autoencoder::load(path)?;
        if meta.center_id != center_id {
            return Err(Error::Checkpoint(format!(
                "{} holds weights for center {}, not {center_id}",
                path.display(),
                meta.center_id
            )));
        }
        self.insert(center_id, model);
        Ok(())
    }

    pub fn model(&self, center_id: u8) -> Result<&Autoencoder> {
        self.models.get(&center_id).ok_or_else(|| {
            Error::Checkpoint(format!("no autoencoder weights for center {center_id}"))
        })
    }

    /// 8-D embeddings of CHW patches from one center.
    pub fn embed_batch(&self, center_id: u8, patches: &[&[f32]]) -> Result<Vec<[f64; LATENT_DIM]>> {
        let model = self.model(center_id)?;
        let mut out = Vec::with_capacity(patches.len());
        for chunk in patches.chunks(16) {
            let x = Tensor::stack(chunk, [3, PATCH_SIZE, PATCH_SIZE])?;
            let latent = model.encode(&x)?;
            for i in 0..chunk.len() {
                out.push(spatial_mean(latent.sample(i), latent.c())?);
            }
        }
        Ok(out)
    }

    pub fn embed(&self, center_id: u8, patch: &[f32]) -> Result<[f64; LATENT_DIM]> {
        Ok(self.embed_batch(center_id, &[patch])?[0])
    }
}

/// One persisted embedding: latent vector plus its 3-D projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub patch_ref: PatchRef,
    pub latent: [f64; LATENT_DIM],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projected: Option<[f64; 3]>,
}

pub fn write_embeddings(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_constant_channels() {
        let mut map = Vec::new();
        for c in 0..8 {
            map.extend(std::iter::repeat_n(c as f32 * 0.5, 64));
        }
        let v = spatial_mean(&map, 8).unwrap();
        assert_eq!(v.len(), 8);
        for (c, x) in v.iter().enumerate() {
            assert_eq!(*x, c as f64 * 0.5);
        }
    }

    #[test]
    fn mean_ignores_spatial_order() {
        let map: Vec<f32> = (0..8 * 16).map(|i| ((i * 37) % 11) as f32).collect();
        let mut shuffled = map.clone();
        for plane in shuffled.chunks_mut(16) {
            plane.reverse();
            plane.swap(0, 7);
        }
        assert_eq!(spatial_mean(&map, 8).unwrap(), spatial_mean(&shuffled, 8).unwrap());
    }

    #[test]
    fn missing_center_weights_is_an_error() {
        let e = Embedder::new();
        assert!(e.embed(2, &vec![0.5; 3 * 128 * 128]).is_err());
    }
}
