use serde::{Deserialize, Serialize};

use super::boxes::{iou, BBox};

/// A scored box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

/// Greedy non-maximum suppression; output sorted by descending score (stable
/// on ties).
pub fn nms(dets: &[Detection], iou_thresh: f64, score_thresh: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].score >= score_thresh).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        if kept.iter().all(|k| iou(&k.bbox, &dets[i].bbox) <= iou_thresh) {
            kept.push(dets[i]);
        }
    }
    kept
}
