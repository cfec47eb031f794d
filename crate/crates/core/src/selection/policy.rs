use serde::{Deserialize, Serialize};

use super::gmm::ClusterModel;
use super::prototypes::{nearest_unused, PrototypePool};
use crate::error::{invalid, Error, Result};
use crate::patches::{PatchLabel, PatchRef};

pub const ALLOWED_SHOTS: [usize; 4] = [1, 2, 4, 8];

/// `k` binary digits of `min(floor(pi * 2^k), 2^k - 1)`, most significant
/// first. `true` selects the lesion pool.
pub fn shot_classes(pi: f64, k: usize) -> Result<Vec<bool>> {
    if k == 0 || k > 30 {
        return invalid(format!("k = {k} outside 1..=30"));
    }
    if !(0.0..=1.0).contains(&pi) {
        return invalid(format!("pi = {pi} outside [0, 1]"));
    }
    let n = shot_count(pi, k);
    Ok((0..k).rev().map(|bit| (n >> bit) & 1 == 1).collect())
}

pub(crate) fn shot_count(pi: f64, k: usize) -> u64 {
    let full = 1u64 << k;
    ((pi * full as f64).floor() as u64).min(full - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportAssignment {
    pub query_ref: PatchRef,
    pub cluster_id: usize,
    pub shot_classes: Vec<bool>,
    pub shots: Vec<PatchRef>,
    /// Class of the pool each shot actually came from.
    pub shot_labels: Vec<PatchLabel>,
    pub fallbacks: usize,
}

fn pool_of(pools: &[PrototypePool], cluster_id: usize, class: PatchLabel) -> Option<&PrototypePool> {
    pools.iter().find(|p| p.cluster_id == cluster_id && p.class == class)
}

/// Picks `k` distinct support prototypes for a query. Digit `i` of
/// [`shot_classes`] picks the pool; within it the nearest unused prototype
/// wins. An exhausted pool falls back to the other class with a warning.
pub fn select_support(
    query_ref: &PatchRef,
    query_pca: &[f64; 3],
    cluster_id: usize,
    k: usize,
    pools: &[PrototypePool],
    model: &ClusterModel,
) -> Result<SupportAssignment> {
    let pi = *model
        .pi_l
        .get(cluster_id)
        .ok_or_else(|| Error::InvalidInput(format!("cluster {cluster_id} not in model")))?;
    let digits = shot_classes(pi, k)?;
    let mut shots: Vec<PatchRef> = Vec::with_capacity(k);
    let mut shot_labels = Vec::with_capacity(k);
    let mut fallbacks = 0;
    for &lesion in &digits {
        let wanted = if lesion {
            PatchLabel::Lesion
        } else {
            PatchLabel::NonLesion
        };
        let other = if lesion {
            PatchLabel::NonLesion
        } else {
            PatchLabel::Lesion
        };
        let pick = |class| {
            pool_of(pools, cluster_id, class).and_then(|p| {
                nearest_unused(
                    p.prototypes.iter().map(|x| (&x.patch_ref, &x.pca)),
                    query_pca,
                    |r| shots.contains(r),
                )
                .map(|(r, _)| r.clone())
            })
        };
        let (shot, label) = match pick(wanted) {
            Some(r) => (r, wanted),
            None => match pick(other) {
                Some(r) => {
                    log::warn!(
                        "cluster {cluster_id}: {wanted:?} pool exhausted for {query_ref}, using {other:?} prototype"
                    );
                    fallbacks += 1;
                    (r, other)
                }
                None => return Err(Error::EmptyPools { cluster: cluster_id }),
            },
        };
        shots.push(shot);
        shot_labels.push(label);
    }
    Ok(SupportAssignment {
        query_ref: query_ref.clone(),
        cluster_id,
        shot_classes: digits,
        shots,
        shot_labels,
        fallbacks,
    })
}
