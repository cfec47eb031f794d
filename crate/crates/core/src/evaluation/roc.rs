use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Result};

fn split(scores: &[f64], labels: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    if scores.len() != labels.len() {
        return invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return invalid("scores contain NaN");
    }
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return invalid(format!(
            "AUC needs both classes, got {} positives and {} negatives",
            pos.len(),
            neg.len()
        ));
    }
    Ok((pos, neg))
}

/// 1-based midranks: tied values share the mean of their positions.
pub(crate) fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Structural components of one ROC curve: per-positive and per-negative
/// placement values.
pub(crate) struct Components {
    pub auc: f64,
    pub v10: Vec<f64>,
    pub v01: Vec<f64>,
}

pub(crate) fn components(pos: &[f64], neg: &[f64]) -> Components {
    let (m, n) = (pos.len(), neg.len());
    let mut all = pos.to_vec();
    all.extend_from_slice(neg);
    let r = midranks(&all);
    let rx = midranks(pos);
    let ry = midranks(neg);
    let v10: Vec<f64> = (0..m).map(|i| (r[i] - rx[i]) / n as f64).collect();
    let v01: Vec<f64> = (0..n).map(|j| 1.0 - (r[m + j] - ry[j]) / m as f64).collect();
    let rank_sum: f64 = r[..m].iter().sum();
    let auc = (rank_sum - (m * (m + 1)) as f64 / 2.0) / (m * n) as f64;
    Components { auc, v10, v01 }
}

/// Mann-Whitney AUC with midranks for ties.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = split(scores, labels)?;
    Ok(components(&pos, &neg).auc)
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub auc: f64,
    pub delong_variance: f64,
    pub ci95: (f64, f64),
    pub level: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pauc_spec90: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl RocResult {
    /// Half-width of the unclipped confidence interval.
    pub fn half_width(&self) -> f64 {
        quantile(self.level) * self.delong_variance.sqrt()
    }

    /// `0.981 ± 0.011`
    pub fn display(&self) -> String {
        format!("{:.3} ± {:.3}", self.auc, self.half_width())
    }
}

fn quantile(level: f64) -> f64 {
    Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf((1.0 + level) / 2.0)
}

/// AUC with DeLong variance and a normal-approximation interval clipped to
/// `[0, 1]`.
pub fn delong_ci(scores: &[f64], labels: &[bool], level: f64) -> Result<RocResult> {
    if !(level > 0.0 && level < 1.0) {
        return invalid(format!("confidence level {level} outside (0, 1)"));
    }
    let (pos, neg) = split(scores, labels)?;
    let c = components(&pos, &neg);
    let var = covariance(&c.v10, &c.v10) / pos.len() as f64
        + covariance(&c.v01, &c.v01) / neg.len() as f64;
    let half = quantile(level) * var.sqrt();
    Ok(RocResult {
        auc: c.auc,
        delong_variance: var,
        ci95: ((c.auc - half).max(0.0), (c.auc + half).min(1.0)),
        level,
        pauc_spec90: None,
        n_pos: pos.len(),
        n_neg: neg.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelongTest {
    pub auc_a: f64,
    pub auc_b: f64,
    /// `100 * (auc_a - auc_b) / auc_b`
    pub delta_percent: f64,
    pub z: f64,
    pub p_value: f64,
    pub sig_code: String,
}

/// Significance code for a p-value: `***` < 0.001, `**` < 0.01, `*` < 0.05,
/// `.` < 0.1, otherwise empty.
pub fn sig_code(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else if p < 0.1 {
        "."
    } else {
        ""
    }
}

pub fn percent_change(auc_new: f64, auc_base: f64) -> f64 {
    100.0 * (auc_new - auc_base) / auc_base
}

/// Two-sided DeLong test for paired ROC curves over the same labels.
pub fn delong_test(scores_a: &[f64], scores_b: &[f64], labels: &[bool]) -> Result<DelongTest> {
    if scores_a.len() != scores_b.len() {
        return invalid(format!(
            "paired score vectors differ in length: {} vs {}",
            scores_a.len(),
            scores_b.len()
        ));
    }
    let (pa, na) = split(scores_a, labels)?;
    let (pb, nb) = split(scores_b, labels)?;
    let a = components(&pa, &na);
    let b = components(&pb, &nb);
    let (m, n) = (pa.len() as f64, na.len() as f64);
    let var = (covariance(&a.v10, &a.v10) + covariance(&b.v10, &b.v10)
        - 2.0 * covariance(&a.v10, &b.v10))
        / m
        + (covariance(&a.v01, &a.v01) + covariance(&b.v01, &b.v01)
            - 2.0 * covariance(&a.v01, &b.v01))
            / n;
    let diff = a.auc - b.auc;
    let (z, p) = if diff == 0.0 {
        (0.0, 1.0)
    } else if var <= 0.0 {
        (f64::INFINITY.copysign(diff), 0.0)
    } else {
        let z = diff / var.sqrt();
        (z, statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2))
    };
    Ok(DelongTest {
        auc_a: a.auc,
        auc_b: b.auc,
        delta_percent: percent_change(a.auc, b.auc),
        z,
        p_value: p,
        sig_code: sig_code(p).to_string(),
    })
}
