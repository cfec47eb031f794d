use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::pauc::pauc;
use super::predict::SlidePrediction;
use super::roc::{delong_ci, delong_test, sig_code, RocResult};
use crate::error::Result;

pub const UNDEFINED_AUC: &str = "undefined AUC";
pub const SPEC90: (f64, f64) = (0.90, 1.00);

fn both_classes(labels: &[bool]) -> bool {
    labels.iter().any(|&l| l) && labels.iter().any(|&l| !l)
}

/// AUC, DeLong interval and pAUC over 90-100% specificity; `None` when the
/// slide has a single class.
pub fn evaluate_prediction(pred: &SlidePrediction) -> Result<Option<RocResult>> {
    let (scores, labels) = (pred.scores(), pred.labels());
    if !both_classes(&labels) {
        return Ok(None);
    }
    let mut roc = delong_ci(&scores, &labels, 0.95)?;
    roc.pauc_spec90 = Some(pauc(&scores, &labels, SPEC90)?.pauc);
    Ok(Some(roc))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub slide_id: String,
    pub model: String,
    pub n_patches: usize,
    pub roc: Option<RocResult>,
}

/// Per-slide AUC table: aligned text and tab-separated records.
pub fn render_evaluation(rows: &[EvaluationRow]) -> (String, String) {
    let mut text = format!(
        "{:<20} {:<10} {:>7} {:>15} {:>17} {:>8}\n",
        "slide", "model", "patches", "AUC", "95% CI", "pAUC90"
    );
    let mut tsv = String::from("slide_id\tmodel\tn_patches\tn_pos\tn_neg\tauc\tdelong_variance\tci_lo\tci_hi\tpauc_spec90\n");
    for r in rows {
        match &r.roc {
            Some(roc) => {
                let p = roc.pauc_spec90.unwrap_or(f64::NAN);
                let _ = writeln!(
                    text,
                    "{:<20} {:<10} {:>7} {:>15} {:>17} {:>8.3}",
                    r.slide_id,
                    r.model,
                    r.n_patches,
                    roc.display(),
                    format!("[{:.3}, {:.3}]", roc.ci95.0, roc.ci95.1),
                    p
                );
                let _ = writeln!(
                    tsv,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    r.slide_id, r.model, r.n_patches, roc.n_pos, roc.n_neg, roc.auc,
                    roc.delong_variance, roc.ci95.0, roc.ci95.1, p
                );
            }
            None => {
                let _ = writeln!(
                    text,
                    "{:<20} {:<10} {:>7} {:>15}",
                    r.slide_id, r.model, r.n_patches, UNDEFINED_AUC
                );
                let _ = writeln!(tsv, "{}\t{}\t{}\t\t\t{UNDEFINED_AUC}\t\t\t\t", r.slide_id, r.model, r.n_patches);
            }
        }
    }
    (text, tsv)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub slide_id: String,
    pub k: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    /// `None` when the slide has a single class.
    pub auc_unet: Option<f64>,
    pub auc_cofcn: Option<f64>,
    pub delta_percent: Option<f64>,
    pub p_value: Option<f64>,
    pub sig_code: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub skipped: Vec<String>,
}

fn paired(a: &SlidePrediction, b: &SlidePrediction) -> bool {
    a.per_patch.len() == b.per_patch.len()
        && a.per_patch
            .iter()
            .zip(&b.per_patch)
            .all(|(x, y)| x.patch_ref() == y.patch_ref() && x.eval_label == y.eval_label)
}

/// Per slide and shot count, the co-FCN AUC change relative to the U-Net
/// baseline with its DeLong significance. Slides whose predictions do not
/// pair up are skipped with a warning.
pub fn compare_report(cofcn: &[(usize, Vec<SlidePrediction>)], unet: &[SlidePrediction]) -> Result<CompareReport> {
    let mut report = CompareReport::default();
    let mut order: Vec<&SlidePrediction> = unet.iter().collect();
    order.sort_by(|a, b| a.slide_id.cmp(&b.slide_id));
    let mut ks: Vec<&(usize, Vec<SlidePrediction>)> = cofcn.iter().collect();
    ks.sort_by_key(|(k, _)| *k);
    for base in order {
        for (k, preds) in &ks {
            let Some(other) = preds.iter().find(|p| p.slide_id == base.slide_id) else {
                log::warn!("slide {} has no co-FCN predictions for k={k}; skipped", base.slide_id);
                report.skipped.push(format!("{} k={k}", base.slide_id));
                continue;
            };
            if !paired(base, other) {
                log::warn!("slide {} predictions are not paired for k={k}; skipped", base.slide_id);
                report.skipped.push(format!("{} k={k}", base.slide_id));
                continue;
            }
            let labels = base.labels();
            let n_pos = labels.iter().filter(|&&l| l).count();
            let mut row = CompareRow {
                slide_id: base.slide_id.clone(),
                k: *k,
                n_pos,
                n_neg: labels.len() - n_pos,
                auc_unet: None,
                auc_cofcn: None,
                delta_percent: None,
                p_value: None,
                sig_code: String::new(),
            };
            if both_classes(&labels) {
                let t = delong_test(&other.scores(), &base.scores(), &labels)?;
                row.auc_unet = Some(t.auc_b);
                row.auc_cofcn = Some(t.auc_a);
                row.delta_percent = Some(t.delta_percent);
                row.p_value = Some(t.p_value);
                row.sig_code = sig_code(t.p_value).to_string();
            }
            report.rows.push(row);
        }
    }
    for (k, preds) in &ks {
        for p in preds {
            if !unet.iter().any(|u| u.slide_id == p.slide_id) {
                log::warn!("slide {} has no U-Net predictions; skipped", p.slide_id);
                report.skipped.push(format!("{} k={k}", p.slide_id));
            }
        }
    }
    Ok(report)
}

fn fmt_opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map(f).unwrap_or_else(|| "-".into())
}

impl CompareReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<20} {:>2} {:>5} {:>5} {:>9} {:>9} {:>9} {:>10} {:<4}\n",
            "slide", "k", "pos", "neg", "AUC U-Net", "AUC coFCN", "delta", "p", "sig"
        );
        for r in &self.rows {
            if r.delta_percent.is_none() {
                let _ = writeln!(
                    s,
                    "{:<20} {:>2} {:>5} {:>5} {UNDEFINED_AUC}",
                    r.slide_id, r.k, r.n_pos, r.n_neg
                );
                continue;
            }
            let _ = writeln!(
                s,
                "{:<20} {:>2} {:>5} {:>5} {:>9} {:>9} {:>9} {:>10} {:<4}",
                r.slide_id,
                r.k,
                r.n_pos,
                r.n_neg,
                fmt_opt(r.auc_unet, |v| format!("{v:.3}")),
                fmt_opt(r.auc_cofcn, |v| format!("{v:.3}")),
                fmt_opt(r.delta_percent, |v| format!("{v:+.1}%")),
                fmt_opt(r.p_value, |v| format!("{v:.3e}")),
                r.sig_code
            );
        }
        for sk in &self.skipped {
            let _ = writeln!(s, "skipped: {sk}");
        }
        s.push_str("signif. codes: 0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1\n");
        s
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("slide_id\tk\tn_pos\tn_neg\tauc_unet\tauc_cofcn\tdelta_percent\tp_value\tsig_code\tstatus\n");
        for r in &self.rows {
            let num = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
            let status = if r.delta_percent.is_some() { "ok" } else { UNDEFINED_AUC };
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.slide_id,
                r.k,
                r.n_pos,
                r.n_neg,
                num(r.auc_unet),
                num(r.auc_cofcn),
                num(r.delta_percent),
                num(r.p_value),
                r.sig_code,
                status
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::predict::PatchPrediction;

    fn pred(id: &str, probs: &[f64], labels: &[u8]) -> SlidePrediction {
        SlidePrediction {
            slide_id: id.into(),
            per_patch: probs
                .iter()
                .zip(labels)
                .enumerate()
                .map(|(i, (&p, &l))| PatchPrediction {
                    slide_id: id.into(),
                    grid_x: i as u32,
                    grid_y: 0,
                    origin_px: (128 * i as u32, 0),
                    eval_label: l,
                    lesion_prob: p,
                })
                .collect(),
            heatmap: vec![],
        }
    }

    #[test]
    fn equal_curves_and_sign() {
        let labels = [0, 0, 1, 1, 0, 1];
        let u = pred("a", &[0.1, 0.5, 0.4, 0.9, 0.3, 0.6], &labels);
        let same = compare_report(&[(2, vec![u.clone()])], std::slice::from_ref(&u)).unwrap();
        assert_eq!(same.rows[0].delta_percent, Some(0.0));
        assert_eq!(same.rows[0].sig_code, "");
        let worse = pred("a", &[0.9, 0.5, 0.4, 0.1, 0.3, 0.6], &labels);
        let r = compare_report(&[(2, vec![worse])], &[u]).unwrap();
        assert!(r.rows[0].delta_percent.unwrap() < 0.0);
        assert!(r.to_text().contains('%'));
    }

    #[test]
    fn undefined_and_unpaired() {
        let one_class = pred("a", &[0.1, 0.2], &[0, 0]);
        let b = pred("b", &[0.1, 0.8], &[0, 1]);
        let b_short = pred("b", &[0.1], &[0]);
        let r = compare_report(&[(1, vec![one_class.clone(), b_short])], &[one_class, b]).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(r.to_text().contains(UNDEFINED_AUC));
        assert!(r.to_tsv().contains(UNDEFINED_AUC));
        assert_eq!(r.skipped, vec!["b k=1".to_string()]);
    }

    #[test]
    fn evaluation_table() {
        let a = pred("a", &[0.1, 0.7, 0.4, 0.9], &[0, 0, 1, 1]);
        let row = EvaluationRow {
            slide_id: "a".into(),
            model: "unet".into(),
            n_patches: 4,
            roc: evaluate_prediction(&a).unwrap(),
        };
        assert_eq!(row.roc.as_ref().unwrap().auc, 0.75);
        let (text, tsv) = render_evaluation(&[row]);
        assert!(text.contains("0.750 ±"));
        assert_eq!(tsv.lines().count(), 2);
        assert!(evaluate_prediction(&pred("c", &[0.2], &[1])).unwrap().is_none());
    }
}
