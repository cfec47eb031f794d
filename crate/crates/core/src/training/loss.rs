use crate::error::{invalid, shape_err, Result};
use crate::nn::{sigmoid, softplus};

pub const PROB_EPS: f64 = 1e-7;

fn check_pair(pred: &[f32], target: &[f32]) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return shape_err(format!(
            "prediction has {} pixels, target {}",
            pred.len(),
            target.len()
        ));
    }
    Ok(())
}

/// Pixel-mean of `-[w_l * y * ln p + (1 - y) * ln(1 - p)]`, with `p` clamped
/// to `[1e-7, 1 - 1e-7]`.
pub fn weighted_bce(pred: &[f32], target: &[f32], w_l: f64) -> Result<f64> {
    Ok(weighted_bce_grad(pred, target, w_l)?.0)
}

/// Loss and its gradient with respect to `pred` (zero where clamped).
pub fn weighted_bce_grad(pred: &[f32], target: &[f32], w_l: f64) -> Result<(f64, Vec<f64>)> {
    check_pair(pred, target)?;
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &y) in pred.iter().zip(target) {
        let raw = p as f64;
        let pc = raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let y = y as f64;
        sum -= w_l * y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        let inside = raw > PROB_EPS && raw < 1.0 - PROB_EPS;
        grad.push(if inside {
            (-w_l * y / pc + (1.0 - y) / (1.0 - pc)) / n
        } else {
            0.0
        });
    }
    Ok((sum / n, grad))
}

/// The same loss on the lesion logit `d` (with `p = sigmoid(d)`), computed
/// without clamping through softplus. Gradient is with respect to `d`.
pub fn weighted_bce_logits(logit: &[f32], target: &[f32], w_l: f64) -> Result<(f64, Vec<f64>)> {
    check_pair(logit, target)?;
    let n = logit.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(logit.len());
    for (&d, &y) in logit.iter().zip(target) {
        let (d, y) = (d as f64, y as f64);
        sum += w_l * y * softplus(-d) + (1.0 - y) * softplus(d);
        let p = sigmoid(d);
        grad.push((-w_l * y * (1.0 - p) + (1.0 - y) * p) / n);
    }
    Ok((sum / n, grad))
}

/// Mean of a cond map whose `k` shot planes are summed separately and added
/// in sorted order.
fn cond_mean(cond_map: &[f32], k: usize) -> Result<f64> {
    if k == 0 || cond_map.is_empty() || !cond_map.len().is_multiple_of(k) {
        return shape_err(format!("cond map of {} values with k = {k}", cond_map.len()));
    }
    let plane = cond_map.len() / k;
    let mut sums: Vec<f64> = cond_map
        .chunks(plane)
        .map(|c| c.iter().map(|&v| v as f64).sum())
        .collect();
    sums.sort_by(f64::total_cmp);
    let mean = sums.iter().sum::<f64>() / cond_map.len() as f64;
    if !mean.is_finite() {
        return invalid("cond map is not finite");
    }
    Ok(mean)
}

fn check_pi(pi: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&pi) {
        return invalid(format!("pi = {pi} outside [0, 1]"));
    }
    Ok(())
}

/// BCE between `sigmoid(mean(cond_map))` and the prevalence target `pi`.
pub fn pretext_loss(cond_map: &[f32], k: usize, pi: f64) -> Result<f64> {
    Ok(pretext_loss_grad(cond_map, k, pi)?.0)
}

/// Loss and the gradient shared by every cond-map entry.
pub fn pretext_loss_grad(cond_map: &[f32], k: usize, pi: f64) -> Result<(f64, f64)> {
    check_pi(pi)?;
    let m = cond_mean(cond_map, k)?;
    let loss = pi * softplus(-m) + (1.0 - pi) * softplus(m);
    let grad = (sigmoid(m) - pi) / cond_map.len() as f64;
    Ok((loss, grad))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub wbce: f64,
    pub pretext: f64,
    pub total: f64,
}

/// `weighted_bce + w * pretext_loss`.
pub fn total_loss(
    seg_prob: &[f32],
    target: &[f32],
    cond_map: &[f32],
    k: usize,
    pi: f64,
    w_l: f64,
    w: f64,
) -> Result<LossTerms> {
    let wbce = weighted_bce(seg_prob, target, w_l)?;
    let pretext = pretext_loss(cond_map, k, pi)?;
    Ok(LossTerms {
        wbce,
        pretext,
        total: wbce + w * pretext,
    })
}
