use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{PatchLabel, PatchManifest};
use crate::error::{invalid, Result};

/// Drops a seeded random `drop_fraction` of the non-lesion records; lesion
/// records are all kept. Exactly `round((1 - f) * N)` non-lesion records
/// survive, in their original order.
pub fn balance_manifest(
    manifest: &PatchManifest,
    drop_fraction: f64,
    seed: u64,
) -> Result<PatchManifest> {
    if !(0.0..=1.0).contains(&drop_fraction) {
        return invalid(format!("drop fraction {drop_fraction} outside [0, 1]"));
    }
    let negatives: Vec<usize> = manifest
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.label == PatchLabel::NonLesion)
        .map(|(i, _)| i)
        .collect();
    let keep = ((1.0 - drop_fraction) * negatives.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = vec![false; manifest.records.len()];
    for pick in sample(&mut rng, negatives.len(), keep) {
        kept[negatives[pick]] = true;
    }
    let records = manifest
        .records
        .iter()
        .zip(&kept)
        .filter(|(r, &k)| k || r.label == PatchLabel::Lesion)
        .map(|(r, _)| r.clone())
        .collect();
    Ok(PatchManifest {
        records,
        labeling_rule: manifest.labeling_rule,
        balance_seed: seed,
        drop_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patches::{LabelingRule, PatchRecord, SetRole};
    use proptest::prelude::*;

    fn manifest(lesion: usize, non_lesion: usize) -> PatchManifest {
        let records = (0..lesion + non_lesion)
            .map(|i| PatchRecord {
                slide_id: "s".into(),
                center_id: 0,
                set_role: SetRole::Support,
                grid_x: i as u32,
                grid_y: 0,
                origin_px: (128 * i as u32, 0),
                size_px: 128,
                label: if i % 7 == 0 && i / 7 < lesion {
                    PatchLabel::Lesion
                } else {
                    PatchLabel::NonLesion
                },
                central_lesion_fraction: 0.0,
            })
            .collect();
        PatchManifest::new(records, LabelingRule::TrainMajority)
    }

    fn exact(lesion: usize, non_lesion: usize) -> PatchManifest {
        let mut m = manifest(0, lesion + non_lesion);
        for r in m.records.iter_mut().take(lesion) {
            r.label = PatchLabel::Lesion;
        }
        m
    }

    #[test]
    fn support_and_query_fractions() {
        let m = exact(10, 100);
        let support = balance_manifest(&m, 0.85, 1).unwrap();
        assert_eq!(support.count(PatchLabel::NonLesion), 15);
        assert_eq!(support.count(PatchLabel::Lesion), 10);
        let query = balance_manifest(&m, 0.95, 1).unwrap();
        assert_eq!(query.count(PatchLabel::NonLesion), 5);
        assert_eq!(query.count(PatchLabel::Lesion), 10);
    }

    #[test]
    fn zero_drop_is_identity() {
        let m = exact(3, 40);
        assert_eq!(balance_manifest(&m, 0.0, 9).unwrap().records, m.records);
    }

    #[test]
    fn full_drop_keeps_only_lesions() {
        let m = exact(3, 40);
        let b = balance_manifest(&m, 1.0, 9).unwrap();
        assert_eq!(b.records.len(), 3);
        assert!(b.records.iter().all(|r| r.label == PatchLabel::Lesion));
    }

    #[test]
    fn out_of_range_fraction_is_rejected() {
        assert!(balance_manifest(&exact(1, 1), 1.5, 0).is_err());
    }

    proptest! {
        #[test]
        fn lesions_survive_and_seed_is_deterministic(
            lesion in 0usize..20, non_lesion in 0usize..200, f in 0.0f64..=1.0, seed in any::<u64>()
        ) {
            let m = manifest(lesion, non_lesion);
            let a = balance_manifest(&m, f, seed).unwrap();
            let b = balance_manifest(&m, f, seed).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.count(PatchLabel::Lesion), m.count(PatchLabel::Lesion));
            let n = m.count(PatchLabel::NonLesion) as f64;
            prop_assert_eq!(a.count(PatchLabel::NonLesion), ((1.0 - f) * n).round() as usize);
        }
    }
}
