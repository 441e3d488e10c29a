use super::anchors::{encode, AnchorSet};
use super::boxes::{iou, BBox};

/// Anchor-to-ground-truth indicator `x_ij`, stored as one optional gt index per
/// anchor so that every row sums to at most one by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchMatrix {
    assignment: Vec<Option<usize>>,
    n_gts: usize,
}

impl MatchMatrix {
    pub fn from_assignment(assignment: Vec<Option<usize>>, n_gts: usize) -> Self {
        assert!(assignment.iter().flatten().all(|&j| j < n_gts), "gt index out of range");
        Self { assignment, n_gts }
    }

    pub fn n_anchors(&self) -> usize {
        self.assignment.len()
    }

    pub fn n_gts(&self) -> usize {
        self.n_gts
    }

    /// `x_ij` as 0 or 1.
    pub fn x(&self, i: usize, j: usize) -> u8 {
        u8::from(self.assignment[i] == Some(j))
    }

    pub fn matched(&self, i: usize) -> Option<usize> {
        self.assignment[i]
    }

    pub fn is_positive(&self, i: usize) -> bool {
        self.assignment[i].is_some()
    }

    /// Number of matched anchors, `N = sum x_ij`.
    pub fn n(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_some()).count()
    }

    pub fn assignment(&self) -> &[Option<usize>] {
        &self.assignment
    }
}

/// Threshold matching plus forced best-anchor matching for every gt.
///
/// Each anchor first takes the gt of highest IoU (lowest index on ties) when
/// that IoU reaches `threshold`. Then gts are visited by descending best IoU and
/// each claims its best anchor not already claimed by another gt, so no gt is
/// left without a match while anchors remain.
pub fn match_anchors(anchors: &AnchorSet, gts: &[BBox], threshold: f64) -> MatchMatrix {
    let na = anchors.len();
    let ng = gts.len();
    let mut assignment = vec![None; na];
    if ng == 0 {
        return MatchMatrix { assignment, n_gts: 0 };
    }
    let ious: Vec<Vec<f64>> = anchors.anchors.iter().map(|a| gts.iter().map(|g| iou(a, g)).collect()).collect();
    for (i, row) in ious.iter().enumerate() {
        let mut best = 0;
        for j in 1..ng {
            if row[j] > row[best] {
                best = j;
            }
        }
        if row[best] >= threshold {
            assignment[i] = Some(best);
        }
    }
    let best_iou = |j: usize| ious.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
    let mut order: Vec<usize> = (0..ng).collect();
    order.sort_by(|&a, &b| best_iou(b).total_cmp(&best_iou(a)).then(a.cmp(&b)));
    let mut forced = vec![false; na];
    for j in order {
        let mut pick: Option<usize> = None;
        for i in 0..na {
            if forced[i] {
                continue;
            }
            if pick.is_none_or(|p| ious[i][j] > ious[p][j]) {
                pick = Some(i);
            }
        }
        if let Some(i) = pick {
            forced[i] = true;
            assignment[i] = Some(j);
        }
    }
    MatchMatrix { assignment, n_gts: ng }
}

/// Encoded regression target per anchor (zeros for unmatched anchors).
pub fn encode_targets(anchors: &AnchorSet, gts: &[BBox], m: &MatchMatrix) -> Vec<[f64; 4]> {
    anchors.anchors.iter().enumerate().map(|(i, a)| m.matched(i).map_or([0.0; 4], |j| encode(a, &gts[j]))).collect()
}
