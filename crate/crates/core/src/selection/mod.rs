//! Per-center support selection: GMM clustering of PCA vectors, lesion
//! prevalence per component, prototype pools, binary-digit shot policy.

mod gmm;
mod kmeans;
mod policy;
mod prevalence;
mod prototypes;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use gmm::{fit_gmm, ClusterModel, GmmOptions, COVARIANCE_REG};
pub use kmeans::kmeans;
pub use policy::{select_support, shot_classes, SupportAssignment, ALLOWED_SHOTS};
pub use prevalence::{class_ratios, estimate_pi};
pub use prototypes::{build_prototype_pools, Prototype, PrototypePool, SupportMember};

use crate::error::{invalid, Error, Result};
use crate::latent::PcaModel;
use crate::patches::PatchRef;

pub const SELECTOR_SCHEMA: u32 = 1;

/// Everything needed to pick support shots for one center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectorArtifact {
    pub schema_version: u32,
    pub center_id: u8,
    pub pca: PcaModel,
    pub model: ClusterModel,
    pub r_pos: Vec<f64>,
    pub r_neg: Vec<f64>,
    pub microcluster_dim: usize,
    pub pools: Vec<PrototypePool>,
}

impl SelectorArtifact {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SELECTOR_SCHEMA {
            return invalid(format!(
                "selector schema {} (expected {SELECTOR_SCHEMA})",
                self.schema_version
            ));
        }
        if self.model.center_id != self.center_id
            || self.pools.iter().any(|p| p.center_id != self.center_id)
        {
            return invalid("selector parts belong to different centers");
        }
        self.model.validate()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a: SelectorArtifact = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        a.validate()?;
        Ok(a)
    }

    /// Projects a latent vector, assigns its component and picks `k` shots.
    pub fn select(
        &self,
        query_ref: &PatchRef,
        latent: &[f64; crate::latent::LATENT_DIM],
        k: usize,
    ) -> Result<SupportAssignment> {
        let v = self.pca.project3(latent)?;
        let cluster = self.model.assign(&v)?;
        select_support(query_ref, &v, cluster, k, &self.pools, &self.model)
    }

    /// Prevalence of the component a latent vector falls in.
    pub fn prevalence(&self, latent: &[f64; crate::latent::LATENT_DIM]) -> Result<f64> {
        let v = self.pca.project3(latent)?;
        let g = self.model.assign(&v)?;
        self.model
            .pi_l
            .get(g)
            .copied()
            .ok_or(Error::EmptyPools { cluster: g })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::fit_pca;
    use crate::patches::PatchLabel;

    #[test]
    fn artifact_round_trips_exactly() {
        let latents: Vec<[f64; 8]> = (0..40)
            .map(|i| {
                let t = i as f64;
                [t.sin(), (t * 0.3).cos(), t * 0.01, 1.0 / (1.0 + t), 0.2, (t * 0.7).sin(), 0.1, 0.0]
            })
            .collect();
        let pca = fit_pca(&latents, 3).unwrap();
        let proj: Vec<[f64; 3]> = latents.iter().map(|l| pca.project3(l).unwrap()).collect();
        let mut model = fit_gmm(&proj, 1, &GmmOptions { n_components: 2, ..Default::default() })
            .unwrap();
        let assign = model.assign_all(&proj).unwrap();
        let labels: Vec<PatchLabel> = (0..40)
            .map(|i| if i % 3 == 0 { PatchLabel::Lesion } else { PatchLabel::NonLesion })
            .collect();
        let (r_pos, r_neg) = class_ratios(&assign, &labels, 2).unwrap();
        model.pi_l = estimate_pi(&r_pos, &r_neg).unwrap();
        let members: Vec<SupportMember> = (0..40)
            .map(|i| SupportMember {
                patch_ref: PatchRef { slide_id: "s".into(), grid_x: i, grid_y: 0 },
                label: labels[i as usize],
                cluster_id: assign[i as usize],
                pca: proj[i as usize],
            })
            .collect();
        let pools = build_prototype_pools(1, &members, 2, 20, 0).unwrap();
        let art = SelectorArtifact {
            schema_version: SELECTOR_SCHEMA,
            center_id: 1,
            pca,
            model,
            r_pos,
            r_neg,
            microcluster_dim: 20,
            pools,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("selector.json");
        art.save(&path).unwrap();
        let back = SelectorArtifact::load(&path).unwrap();
        assert_eq!(art, back);
        let q = PatchRef { slide_id: "q".into(), grid_x: 0, grid_y: 0 };
        let a = back.select(&q, &latents[3], 2).unwrap();
        assert_eq!(a.shots.len(), 2);
        assert_ne!(a.shots[0], a.shots[1]);
    }
}
