use serde::{Deserialize, Serialize};

use crate::detection::{iou, BBox};
use crate::error::{Error, Result};

/// Whether a detection needs `IoU > t` or `IoU >= t` to count as a true positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouRule {
    #[default]
    Strict,
    Inclusive,
}

impl IouRule {
    pub fn passes(self, v: f64, t: f64) -> bool {
        match self {
            IouRule::Strict => v > t,
            IouRule::Inclusive => v >= t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub r#fn: usize,
}

impl MatchCounts {
    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.r#fn;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn f1(&self) -> f64 {
        match (self.precision(), self.recall()) {
            (Some(p), Some(r)) => f1_score(p, r),
            _ => 0.0,
        }
    }
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.r#fn += o.r#fn;
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall <= 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: f64,
    pub counts: MatchCounts,
}

impl From<MatchCounts> for Prf {
    fn from(counts: MatchCounts) -> Self {
        Prf { precision: counts.precision(), recall: counts.recall(), f1: counts.f1(), counts }
    }
}

/// Greedy one-to-one assignment by descending IoU: every ground truth meets
/// the best prediction still free. Returns `(pred, gt, iou)` triples.
pub fn greedy_pairs(preds: &[BBox], gts: &[BBox]) -> Vec<(usize, usize, f64)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(preds.len() * gts.len());
    for (j, g) in gts.iter().enumerate() {
        for (i, p) in preds.iter().enumerate() {
            pairs.push((iou(p, g), j, i));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut gt_used = vec![false; gts.len()];
    let mut pred_used = vec![false; preds.len()];
    let mut out = Vec::with_capacity(preds.len().min(gts.len()));
    for (v, j, i) in pairs {
        if gt_used[j] || pred_used[i] {
            continue;
        }
        gt_used[j] = true;
        pred_used[i] = true;
        out.push((i, j, v));
    }
    out
}

/// Counts for one image under [`greedy_pairs`]. A pair passing the threshold
/// is a TP; otherwise its prediction is an FP and its ground truth an FN.
/// Leftover predictions are FPs, leftover ground truths FNs.
pub fn match_image(preds: &[BBox], gts: &[BBox], iou_threshold: f64, rule: IouRule) -> MatchCounts {
    let pairs = greedy_pairs(preds, gts);
    let tp = pairs.iter().filter(|p| rule.passes(p.2, iou_threshold)).count();
    MatchCounts { tp, fp: preds.len() - tp, r#fn: gts.len() - tp }
}

/// Pooled precision, recall and F1 over per-image box lists.
pub fn detection_prf(preds: &[Vec<BBox>], gts: &[Vec<BBox>], iou_threshold: f64, rule: IouRule) -> Prf {
    assert_eq!(preds.len(), gts.len(), "one prediction list per image");
    let mut total = MatchCounts::default();
    for (p, g) in preds.iter().zip(gts) {
        total += match_image(p, g, iou_threshold, rule);
    }
    total.into()
}

/// `0.95, 0.90, ..., 0.05`.
pub fn default_iou_grid() -> Vec<f64> {
    (1..=19).rev().map(|k| k as f64 / 20.0).collect()
}

/// First threshold, scanning the grid from high to low, whose precision is 1.
pub fn select_iou_threshold(precision_at: &[(f64, Option<f64>)]) -> Result<f64> {
    let mut sorted = precision_at.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    sorted
        .iter()
        .find(|(_, p)| *p == Some(1.0))
        .map(|(t, _)| *t)
        .ok_or_else(|| Error::Undefined("no IoU threshold reaches precision 1".into()))
}

pub fn auto_iou_threshold(preds: &[Vec<BBox>], gts: &[Vec<BBox>], grid: &[f64], rule: IouRule) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::invalid("empty IoU grid"));
    }
    let table: Vec<(f64, Option<f64>)> =
        grid.iter().map(|&t| (t, detection_prf(preds, gts, t, rule).precision)).collect();
    select_iou_threshold(&table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn reference_f1_arithmetic() {
        assert!((f1_score(1.0, 0.9819) - 0.9908).abs() < 5e-4);
        let t = select_iou_threshold(&[(0.5, Some(1.0)), (0.6, Some(0.9708)), (0.7, Some(0.9264))]).unwrap();
        assert_eq!(t, 0.5);
    }

    #[test]
    fn hand_enumerated_matching() {
        // second pred overlaps gt 0 at IoU 0.6: widen gt 0 so the ratio is exact
        let g = vec![b(0.0, 0.0, 10.0, 10.0), b(100.0, 100.0, 110.0, 110.0)];
        let p = vec![b(0.0, 0.0, 10.0, 6.0), b(50.0, 50.0, 60.0, 60.0)];
        let r = detection_prf(&[p], &[g], 0.5, IouRule::Strict);
        assert_eq!(r.counts, MatchCounts { tp: 1, fp: 1, r#fn: 1 });
        assert_eq!((r.precision, r.recall, r.f1), (Some(0.5), Some(0.5), 0.5));
    }

    #[test]
    fn perfect_and_stray_detectors() {
        let g = vec![vec![b(0.0, 0.0, 10.0, 10.0)], vec![b(5.0, 5.0, 20.0, 20.0)]];
        let r = detection_prf(&g, &g, 0.5, IouRule::Strict);
        assert_eq!((r.precision, r.recall, r.f1), (Some(1.0), Some(1.0), 1.0));
        assert_eq!(auto_iou_threshold(&g, &g, &default_iou_grid(), IouRule::Strict).unwrap(), 0.95);
        let mut stray = g.clone();
        stray[0].push(b(200.0, 200.0, 210.0, 210.0));
        assert!(auto_iou_threshold(&stray, &g, &default_iou_grid(), IouRule::Strict).is_err());
    }

    #[test]
    fn strict_versus_inclusive() {
        let g = vec![vec![b(0.0, 0.0, 10.0, 10.0)]];
        let p = vec![vec![b(0.0, 0.0, 10.0, 5.0)]];
        assert_eq!(detection_prf(&p, &g, 0.5, IouRule::Strict).counts.tp, 0);
        assert_eq!(detection_prf(&p, &g, 0.5, IouRule::Inclusive).counts.tp, 1);
    }
}
