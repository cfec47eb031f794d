use serde::{Deserialize, Serialize};

use super::kmeans::{dist2, kmeans};
use crate::error::{invalid, Result};
use crate::patches::{PatchLabel, PatchRef};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub patch_ref: PatchRef,
    pub pca: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypePool {
    pub center_id: u8,
    pub cluster_id: usize,
    pub class: PatchLabel,
    pub prototypes: Vec<Prototype>,
}

/// A labelled support patch with its mixture component and PCA vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportMember {
    pub patch_ref: PatchRef,
    pub label: PatchLabel,
    pub cluster_id: usize,
    pub pca: [f64; 3],
}

fn pool_seed(seed: u64, cluster: usize, class: PatchLabel) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((cluster as u64) << 1 | class.is_lesion() as u64)
}

/// Member nearest to `target` that is not yet taken; ties go to the smaller
/// patch reference.
pub(crate) fn nearest_unused<'a>(
    members: impl Iterator<Item = (&'a PatchRef, &'a [f64; 3])>,
    target: &[f64; 3],
    taken: impl Fn(&PatchRef) -> bool,
) -> Option<(&'a PatchRef, &'a [f64; 3])> {
    let mut best: Option<(f64, &PatchRef, &[f64; 3])> = None;
    for (r, v) in members {
        if taken(r) {
            continue;
        }
        let d = dist2(v, target);
        let better = match best {
            None => true,
            Some((bd, br, _)) => d < bd || (d == bd && r < br),
        };
        if better {
            best = Some((d, r, v));
        }
    }
    best.map(|(_, r, v)| (r, v))
}

/// One pool per (component, class): k-means with
/// `max(1, count / microcluster_dim)` centroids, each replaced by its nearest
/// distinct member. Pools are returned ordered by component, non-lesion first.
pub fn build_prototype_pools(
    center_id: u8,
    members: &[SupportMember],
    n_components: usize,
    microcluster_dim: usize,
    seed: u64,
) -> Result<Vec<PrototypePool>> {
    if microcluster_dim == 0 {
        return invalid("microcluster_dim must be at least 1");
    }
    let mut sorted: Vec<&SupportMember> = members.iter().collect();
    sorted.sort_by(|a, b| a.patch_ref.cmp(&b.patch_ref));
    let mut pools = Vec::with_capacity(2 * n_components);
    for cluster_id in 0..n_components {
        for class in [PatchLabel::NonLesion, PatchLabel::Lesion] {
            let group: Vec<&SupportMember> = sorted
                .iter()
                .copied()
                .filter(|m| m.cluster_id == cluster_id && m.label == class)
                .collect();
            let mut prototypes: Vec<Prototype> = Vec::new();
            if !group.is_empty() {
                let k = (group.len() / microcluster_dim).max(1);
                let points: Vec<[f64; 3]> = group.iter().map(|m| m.pca).collect();
                for c in kmeans(&points, k, pool_seed(seed, cluster_id, class), 300) {
                    let pick = nearest_unused(
                        group.iter().map(|m| (&m.patch_ref, &m.pca)),
                        &c,
                        |r| prototypes.iter().any(|p| &p.patch_ref == r),
                    );
                    if let Some((r, v)) = pick {
                        prototypes.push(Prototype {
                            patch_ref: r.clone(),
                            pca: *v,
                        });
                    }
                }
            }
            pools.push(PrototypePool {
                center_id,
                cluster_id,
                class,
                prototypes,
            });
        }
    }
    Ok(pools)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn member(i: usize, label: PatchLabel, cluster: usize, pca: [f64; 3]) -> SupportMember {
        SupportMember {
            patch_ref: PatchRef {
                slide_id: format!("s{:02}", i % 3),
                grid_x: i as u32,
                grid_y: 0,
            },
            label,
            cluster_id: cluster,
            pca,
        }
    }

    fn spread(n: usize, label: PatchLabel, cluster: usize) -> Vec<SupportMember> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                member(i + 1000 * cluster + 500 * label.is_lesion() as usize, label, cluster, [
                    (t * 0.37).sin(),
                    (t * 0.11).cos(),
                    t * 0.01,
                ])
            })
            .collect()
    }

    fn pool(pools: &[PrototypePool], cluster: usize, class: PatchLabel) -> &PrototypePool {
        pools.iter().find(|p| p.cluster_id == cluster && p.class == class).unwrap()
    }

    #[test]
    fn pool_sizes_follow_floor_rule() {
        let mut m = spread(40, PatchLabel::Lesion, 0);
        m.extend(spread(5, PatchLabel::NonLesion, 0));
        m.extend(spread(61, PatchLabel::NonLesion, 1));
        let pools = build_prototype_pools(0, &m, 2, 20, 1).unwrap();
        assert_eq!(pools.len(), 4);
        assert_eq!(pool(&pools, 0, PatchLabel::Lesion).prototypes.len(), 2);
        assert_eq!(pool(&pools, 0, PatchLabel::NonLesion).prototypes.len(), 1);
        assert_eq!(pool(&pools, 1, PatchLabel::NonLesion).prototypes.len(), 3);
        assert!(pool(&pools, 1, PatchLabel::Lesion).prototypes.is_empty());
    }

    #[test]
    fn prototypes_are_unique_members() {
        let m = spread(100, PatchLabel::Lesion, 0);
        let pools = build_prototype_pools(0, &m, 1, 20, 4).unwrap();
        let protos = &pool(&pools, 0, PatchLabel::Lesion).prototypes;
        assert_eq!(protos.len(), 5);
        for (i, p) in protos.iter().enumerate() {
            assert!(m.iter().any(|x| x.patch_ref == p.patch_ref && x.pca == p.pca));
            assert!(protos[..i].iter().all(|q| q.patch_ref != p.patch_ref));
        }
    }

    #[test]
    fn member_order_does_not_matter() {
        let m = spread(45, PatchLabel::NonLesion, 0);
        let mut rev = m.clone();
        rev.reverse();
        assert_eq!(
            build_prototype_pools(0, &m, 1, 20, 8).unwrap(),
            build_prototype_pools(0, &rev, 1, 20, 8).unwrap()
        );
    }

    #[test]
    fn zero_microcluster_dim_rejected() {
        assert!(build_prototype_pools(0, &[], 6, 0, 0).is_err());
        assert_eq!(build_prototype_pools(0, &[], 6, 20, 0).unwrap().len(), 12);
    }
}
