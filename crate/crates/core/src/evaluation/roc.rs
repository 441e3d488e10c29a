use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive; `None` calls nothing positive.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: Option<f64>,
    pub sensitivity: f64,
    pub specificity: f64,
    pub youden: f64,
}

/// Mann-Whitney AUC via average ranks; equals the pair count with ties as 1/2.
pub fn auc_mann_whitney(scores: &[f64], labels: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len(), "one label per score");
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Threshold sweep over distinct scores, from `(0, 0)` to `(1, 1)`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let auc = auc_mann_whitney(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: None }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push(RocPoint { fpr: fp / n_neg, tpr: tp / n_pos, threshold: Some(t) });
    }
    Ok(RocCurve { points, auc })
}

impl RocCurve {
    /// Area by the trapezoid rule over the curve vertices.
    pub fn trapezoid_area(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum()
    }
}

/// Vertex maximising Youden's `J = TPR - FPR`; ties go to higher sensitivity.
pub fn operating_point(curve: &RocCurve) -> OperatingPoint {
    let best = curve
        .points
        .iter()
        .max_by(|a, b| (a.tpr - a.fpr).total_cmp(&(b.tpr - b.fpr)).then(a.tpr.total_cmp(&b.tpr)))
        .expect("curve has endpoints");
    OperatingPoint {
        threshold: best.threshold,
        sensitivity: best.tpr,
        specificity: 1.0 - best.fpr,
        youden: best.tpr - best.fpr,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_aucs() {
        let l = [true, true, false, false];
        assert_eq!(auc_mann_whitney(&[0.9, 0.8, 0.3, 0.4], &l).unwrap(), 1.0);
        assert_eq!(auc_mann_whitney(&[0.5; 4], &l).unwrap(), 0.5);
        assert_eq!(auc_mann_whitney(&[0.8, 0.4, 0.6, 0.2], &l).unwrap(), 0.75);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn curve_shape() {
        let c = roc_auc(&[0.8, 0.4, 0.6, 0.2, 0.6], &[true, true, false, false, true]).unwrap();
        assert_eq!((c.points[0].fpr, c.points[0].tpr), (0.0, 0.0));
        let last = c.points.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert!(c.points.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
        assert!((c.trapezoid_area() - c.auc).abs() < 1e-12);
    }

    #[test]
    fn youden_vertex() {
        let curve = RocCurve {
            points: vec![
                RocPoint { fpr: 0.0, tpr: 0.0, threshold: None },
                RocPoint { fpr: 0.2, tpr: 0.9, threshold: Some(0.5) },
                RocPoint { fpr: 1.0, tpr: 1.0, threshold: Some(0.1) },
            ],
            auc: 0.0,
        };
        let op = operating_point(&curve);
        assert_eq!(op.threshold, Some(0.5));
        assert!((op.sensitivity - 0.9).abs() < 1e-12 && (op.specificity - 0.8).abs() < 1e-12);
        let perfect = roc_auc(&[0.9, 0.1], &[true, false]).unwrap();
        let op = operating_point(&perfect);
        assert_eq!((op.sensitivity, op.specificity), (1.0, 1.0));
        let ties = operating_point(&roc_auc(&[0.5, 0.5], &[true, false]).unwrap());
        assert_eq!(ties.youden, 0.0);
        assert_eq!(ties.sensitivity, 1.0 - ties.specificity);
    }
}
