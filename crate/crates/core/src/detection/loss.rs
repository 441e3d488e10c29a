//! Multi-box loss: smooth-L1 localisation plus binary cross-entropy confidence
//! with hard-negative mining, normalised by the number of matched anchors.

use serde::{Deserialize, Serialize};

use super::matching::MatchMatrix;
use crate::error::{Error, Result};

/// Probabilities are clipped to `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectLossConfig {
    /// Weight of the localisation term.
    pub loc_weight: f64,
    /// Hard negatives kept per positive.
    pub neg_pos_ratio: f64,
    /// IoU at which an anchor matches a ground truth.
    pub match_iou: f64,
}

impl Default for DetectLossConfig {
    fn default() -> Self {
        Self { loc_weight: 1.0, neg_pos_ratio: 3.0, match_iou: 0.5 }
    }
}

impl DetectLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.loc_weight > 0.0 && self.neg_pos_ratio >= 1.0 && (0.0..=1.0).contains(&self.match_iou)) {
            return Err(Error::invalid(format!("bad detection loss config {self:?}")));
        }
        Ok(())
    }
}

pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Sum over matched anchors of smooth-L1 over the four offset components.
pub fn localization_loss(m: &MatchMatrix, pred: &[[f64; 4]], target: &[[f64; 4]]) -> f64 {
    (0..m.n_anchors())
        .filter(|&i| m.is_positive(i))
        .map(|i| (0..4).map(|k| smooth_l1(pred[i][k] - target[i][k])).sum::<f64>())
        .sum()
}

/// Gradient of [`localization_loss`] with respect to `pred`.
pub fn localization_grad(m: &MatchMatrix, pred: &[[f64; 4]], target: &[[f64; 4]]) -> Vec<[f64; 4]> {
    (0..m.n_anchors())
        .map(|i| {
            if m.is_positive(i) {
                std::array::from_fn(|k| smooth_l1_grad(pred[i][k] - target[i][k]))
            } else {
                [0.0; 4]
            }
        })
        .collect()
}

fn clip(c: f64) -> f64 {
    c.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Unmatched anchors with the largest background loss `-log(1 - c)`, at most
/// `ratio * N` of them; ties go to the lower anchor index.
pub fn hard_negatives(m: &MatchMatrix, c: &[f64], ratio: f64) -> Vec<usize> {
    let k = (ratio * m.n() as f64).floor() as usize;
    let mut neg: Vec<usize> = (0..m.n_anchors()).filter(|&i| !m.is_positive(i)).collect();
    neg.sort_by(|&a, &b| c[b].total_cmp(&c[a]).then(a.cmp(&b)));
    neg.truncate(k);
    neg.sort_unstable();
    neg
}

/// BCE over positives and the given negatives.
pub fn confidence_loss_with(m: &MatchMatrix, c: &[f64], negatives: &[usize]) -> f64 {
    let pos: f64 = (0..m.n_anchors()).filter(|&i| m.is_positive(i)).map(|i| -clip(c[i]).ln()).sum();
    let neg: f64 = negatives.iter().map(|&i| -(1.0 - clip(c[i])).ln()).sum();
    pos + neg
}

/// Gradient of [`confidence_loss_with`] with respect to `c` (zero where clipped).
pub fn confidence_grad_with(m: &MatchMatrix, c: &[f64], negatives: &[usize]) -> Vec<f64> {
    let inside = |v: f64| v > PROB_EPS && v < 1.0 - PROB_EPS;
    let mut g = vec![0.0; c.len()];
    for i in 0..m.n_anchors() {
        if m.is_positive(i) && inside(c[i]) {
            g[i] = -1.0 / c[i];
        }
    }
    for &i in negatives {
        if inside(c[i]) {
            g[i] = 1.0 / (1.0 - c[i]);
        }
    }
    g
}

/// Confidence loss with hard-negative mining at `cfg.neg_pos_ratio`.
pub fn confidence_loss(m: &MatchMatrix, c: &[f64], cfg: &DetectLossConfig) -> f64 {
    confidence_loss_with(m, c, &hard_negatives(m, c, cfg.neg_pos_ratio))
}

/// `(L_conf + alpha * L_loc) / N`, or 0 when nothing is matched.
pub fn multibox_loss(
    m: &MatchMatrix,
    pred: &[[f64; 4]],
    target: &[[f64; 4]],
    c: &[f64],
    cfg: &DetectLossConfig,
) -> f64 {
    let n = m.n();
    if n == 0 {
        return 0.0;
    }
    (confidence_loss(m, c, cfg) + cfg.loc_weight * localization_loss(m, pred, target)) / n as f64
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Loss terms and gradients with respect to raw network outputs.
#[derive(Debug, Clone)]
pub struct MultiboxTerms {
    pub loss: f64,
    pub conf: f64,
    pub loc: f64,
    pub n: usize,
    pub d_offsets: Vec<[f64; 4]>,
    pub d_logits: Vec<f64>,
}

/// [`multibox_loss`] evaluated on confidence logits, with gradients. The
/// logit gradient uses the closed form `sigmoid(z) - x`, which agrees with the
/// chained probability gradient wherever the clip is inactive.
pub fn multibox_terms(
    m: &MatchMatrix,
    pred: &[[f64; 4]],
    target: &[[f64; 4]],
    logits: &[f64],
    cfg: &DetectLossConfig,
) -> MultiboxTerms {
    let na = m.n_anchors();
    let n = m.n();
    let c: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    if n == 0 {
        return MultiboxTerms {
            loss: 0.0,
            conf: 0.0,
            loc: 0.0,
            n,
            d_offsets: vec![[0.0; 4]; na],
            d_logits: vec![0.0; na],
        };
    }
    let negatives = hard_negatives(m, &c, cfg.neg_pos_ratio);
    let conf = confidence_loss_with(m, &c, &negatives);
    let loc = localization_loss(m, pred, target);
    let inv_n = 1.0 / n as f64;
    let mut d_logits = vec![0.0; na];
    for i in 0..na {
        if m.is_positive(i) {
            d_logits[i] = (c[i] - 1.0) * inv_n;
        }
    }
    for &i in &negatives {
        d_logits[i] = c[i] * inv_n;
    }
    let d_offsets =
        localization_grad(m, pred, target).into_iter().map(|g| g.map(|v| v * cfg.loc_weight * inv_n)).collect();
    MultiboxTerms { loss: (conf + cfg.loc_weight * loc) * inv_n, conf, loc, n, d_offsets, d_logits }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_match(n_anchors: usize) -> MatchMatrix {
        let mut a = vec![None; n_anchors];
        a[0] = Some(0);
        MatchMatrix::from_assignment(a, 1)
    }

    #[test]
    fn smooth_l1_branches() {
        assert_eq!(smooth_l1(0.0), 0.0);
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(-2.0), 1.5);
        assert!((smooth_l1(1.0 - 1e-12) - 0.5).abs() < 1e-11);
        assert_eq!(smooth_l1(1.0), 0.5);
    }

    #[test]
    fn single_term_examples() {
        let m = one_match(1);
        let pred = [[0.5, 0.0, 0.0, 0.0]];
        let tgt = [[0.0; 4]];
        assert_eq!(localization_loss(&m, &pred, &tgt), 0.125);
        let cfg = DetectLossConfig::default();
        let conf = confidence_loss(&m, &[0.5], &cfg);
        assert!((conf - 2f64.ln()).abs() < 1e-12);
        let total = multibox_loss(&m, &pred, &tgt, &[0.5], &cfg);
        assert!((total - (2f64.ln() + 0.125)).abs() < 1e-12);
        assert!((total - 0.8181).abs() < 5e-5);
    }

    #[test]
    fn empty_match_is_zero() {
        let m = MatchMatrix::from_assignment(vec![None; 3], 0);
        let cfg = DetectLossConfig::default();
        assert_eq!(multibox_loss(&m, &[[1.0; 4]; 3], &[[0.0; 4]; 3], &[0.9; 3], &cfg), 0.0);
        assert!(hard_negatives(&m, &[0.9; 3], 3.0).is_empty());
    }

    #[test]
    fn mining_picks_most_confident_background() {
        let m = one_match(6);
        let c = [0.9, 0.2, 0.7, 0.1, 0.7, 0.5];
        assert_eq!(hard_negatives(&m, &c, 3.0), vec![2, 4, 5]);
    }

    #[test]
    fn logit_gradient_matches_closed_form() {
        let m = one_match(4);
        let logits = [0.3, 1.2, -0.4, 2.0];
        let t = multibox_terms(&m, &[[0.0; 4]; 4], &[[0.0; 4]; 4], &logits, &DetectLossConfig::default());
        assert!((t.d_logits[0] - (sigmoid(0.3) - 1.0)).abs() < 1e-12);
        assert!((t.d_logits[3] - sigmoid(2.0)).abs() < 1e-12);
    }
}
