use crate::error::{invalid, Result};
use crate::patches::PatchLabel;

/// Per-component lesion density `r_pos / (r_pos + r_neg)`; 0 where both
/// ratios are 0.
pub fn estimate_pi(r_pos: &[f64], r_neg: &[f64]) -> Result<Vec<f64>> {
    if r_pos.len() != r_neg.len() {
        return invalid(format!(
            "ratio vectors differ in length: {} vs {}",
            r_pos.len(),
            r_neg.len()
        ));
    }
    if r_pos.iter().chain(r_neg).any(|r| !r.is_finite() || *r < 0.0) {
        return invalid("ratios must be finite and non-negative");
    }
    for (name, r) in [("r_pos", r_pos), ("r_neg", r_neg)] {
        let total: f64 = r.iter().sum();
        if total > 1.0 + 1e-9 {
            log::warn!("{name} components sum to {total} > 1");
        }
    }
    Ok(r_pos
        .iter()
        .zip(r_neg)
        .map(|(&p, &n)| if p + n == 0.0 { 0.0 } else { p / (p + n) })
        .collect())
}

/// Fraction of each class that falls in each component.
pub fn class_ratios(
    assignments: &[usize],
    labels: &[PatchLabel],
    n_components: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if assignments.len() != labels.len() {
        return invalid("assignments and labels differ in length");
    }
    let mut pos = vec![0usize; n_components];
    let mut neg = vec![0usize; n_components];
    for (&g, &l) in assignments.iter().zip(labels) {
        if g >= n_components {
            return invalid(format!("component {g} out of range"));
        }
        match l {
            PatchLabel::Lesion => pos[g] += 1,
            PatchLabel::NonLesion => neg[g] += 1,
        }
    }
    let norm = |c: Vec<usize>| {
        let total: usize = c.iter().sum();
        c.iter()
            .map(|&x| if total == 0 { 0.0 } else { x as f64 / total as f64 })
            .collect::<Vec<f64>>()
    };
    Ok((norm(pos), norm(neg)))
}
