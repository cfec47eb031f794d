use super::{LabelingRule, PatchLabel, CENTRAL, PATCH_SIZE};
use crate::error::{shape_err, Result};

/// Row-major binary raster; any non-zero value marks lesion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Copies out a `size`x`size` window at `origin`.
    pub fn crop(&self, origin: (usize, usize), size: usize) -> Result<BinaryMask> {
        if origin.0 + size > self.width || origin.1 + size > self.height {
            return shape_err(format!(
                "crop at {origin:?} of size {size} exceeds {}x{} mask",
                self.width, self.height
            ));
        }
        let mut out = BinaryMask::zeros(size, size);
        for y in 0..size {
            let src = (origin.1 + y) * self.width + origin.0;
            out.data[y * size..(y + 1) * size].copy_from_slice(&self.data[src..src + size]);
        }
        Ok(out)
    }
}

fn central_lesion_pixels(mask: &BinaryMask) -> Result<usize> {
    if mask.width != PATCH_SIZE || mask.height != PATCH_SIZE {
        return shape_err(format!(
            "mask patch is {}x{}, expected {PATCH_SIZE}x{PATCH_SIZE}",
            mask.width, mask.height
        ));
    }
    Ok(CENTRAL
        .flat_map(|y| CENTRAL.map(move |x| (x, y)))
        .filter(|&(x, y)| mask.get(x, y))
        .count())
}

/// Training rule: lesion iff at least 50% of the central 64x64 window is lesion.
pub fn label_patch_train(mask: &BinaryMask) -> Result<(PatchLabel, f64)> {
    let area = CENTRAL.len() * CENTRAL.len();
    let fraction = central_lesion_pixels(mask)? as f64 / area as f64;
    let label = if fraction >= 0.5 {
        PatchLabel::Lesion
    } else {
        PatchLabel::NonLesion
    };
    Ok((label, fraction))
}

/// Evaluation rule: lesion iff any central pixel is lesion.
pub fn label_patch_eval(mask: &BinaryMask) -> Result<PatchLabel> {
    Ok(if central_lesion_pixels(mask)? > 0 {
        PatchLabel::Lesion
    } else {
        PatchLabel::NonLesion
    })
}

/// Label and central fraction under the given rule.
pub fn label_patch(mask: &BinaryMask, rule: LabelingRule) -> Result<(PatchLabel, f64)> {
    let (train_label, fraction) = label_patch_train(mask)?;
    Ok(match rule {
        LabelingRule::TrainMajority => (train_label, fraction),
        LabelingRule::EvalAnyPixel => (label_patch_eval(mask)?, fraction),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn full() -> BinaryMask {
        BinaryMask {
            width: 128,
            height: 128,
            data: vec![1; 128 * 128],
        }
    }

    #[test]
    fn saturated_central_region() {
        assert_eq!(label_patch_train(&full()).unwrap(), (PatchLabel::Lesion, 1.0));
        assert_eq!(label_patch_eval(&full()).unwrap(), PatchLabel::Lesion);
    }

    #[test]
    fn half_coverage_is_inclusive() {
        let mut m = BinaryMask::zeros(128, 128);
        // top 32 rows of the central window: 32 * 64 = 2048 pixels
        for y in 32..64 {
            for x in 32..96 {
                m.set(x, y, true);
            }
        }
        assert_eq!(label_patch_train(&m).unwrap(), (PatchLabel::Lesion, 0.5));
        m.set(32, 32, false);
        assert_eq!(label_patch_train(&m).unwrap().0, PatchLabel::NonLesion);
    }

    #[test]
    fn empty_mask() {
        let m = BinaryMask::zeros(128, 128);
        assert_eq!(label_patch_train(&m).unwrap(), (PatchLabel::NonLesion, 0.0));
        assert_eq!(label_patch_eval(&m).unwrap(), PatchLabel::NonLesion);
    }

    #[test]
    fn single_central_pixel_is_lesion_for_eval() {
        let mut m = BinaryMask::zeros(128, 128);
        m.set(64, 64, true);
        assert_eq!(label_patch_eval(&m).unwrap(), PatchLabel::Lesion);
        assert_eq!(label_patch_train(&m).unwrap().0, PatchLabel::NonLesion);
    }

    #[test]
    fn pixels_outside_the_window_are_ignored() {
        let mut m = BinaryMask::zeros(128, 128);
        for x in 0..128 {
            m.set(x, 31, true);
            m.set(x, 96, true);
        }
        assert_eq!(label_patch_eval(&m).unwrap(), PatchLabel::NonLesion);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        assert!(label_patch_train(&BinaryMask::zeros(64, 128)).is_err());
        assert!(label_patch_eval(&BinaryMask::zeros(128, 127)).is_err());
    }

    proptest! {
        #[test]
        fn majority_implies_any_pixel(bits in prop::collection::vec(any::<bool>(), 64 * 64)) {
            let mut m = BinaryMask::zeros(128, 128);
            for (i, b) in bits.iter().enumerate() {
                m.set(32 + i % 64, 32 + i / 64, *b);
            }
            if label_patch_train(&m).unwrap().0 == PatchLabel::Lesion {
                prop_assert_eq!(label_patch_eval(&m).unwrap(), PatchLabel::Lesion);
            }
        }
    }
}
