use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// ROC vertices `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one per distinct
/// threshold; tied scores give a diagonal step.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    if scores.len() != labels.len() {
        return invalid("scores and labels differ in length");
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return invalid("ROC needs both classes");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pts.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(pts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialAuc {
    /// Raw area over the specificity interval.
    pub pauc: f64,
    /// McClish standardized value in `[0.5, 1]` for a better-than-chance curve.
    pub mcclish: f64,
}

/// Area under the ROC curve restricted to specificities in `[lo, hi]`,
/// trapezoidal, interpolating at the interval ends. Not normalized.
pub fn pauc(scores: &[f64], labels: &[bool], specificity: (f64, f64)) -> Result<PartialAuc> {
    let (lo, hi) = specificity;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
        return invalid(format!("empty or invalid specificity range ({lo}, {hi})"));
    }
    let (a, b) = (1.0 - hi, 1.0 - lo);
    let pts = roc_points(scores, labels)?;
    let mut area = 0.0;
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x1 <= x0 {
            continue;
        }
        let l = x0.max(a);
        let r = x1.min(b);
        if r <= l {
            continue;
        }
        let at = |x: f64| y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        area += (r - l) * (at(l) + at(r)) / 2.0;
    }
    let min = (b * b - a * a) / 2.0;
    let max = b - a;
    Ok(PartialAuc {
        pauc: area,
        mcclish: 0.5 * (1.0 + (area - min) / (max - min)),
    })
}
