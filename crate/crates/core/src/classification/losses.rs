//! Classification losses and their gradients with respect to logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability clip applied before every logarithm.
pub const PROB_EPS: f64 = 1e-7;

fn clip(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Derivative of `clip` (zero where the clip is active).
fn clip_slope(p: f64) -> f64 {
    if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        1.0
    } else {
        0.0
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FocalConfig {
    pub gamma: f64,
    /// Per-class weights indexed by each sample's true class.
    pub alpha: Vec<f64>,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self { gamma: 2.0, alpha: vec![1.0; 4] }
    }
}

impl FocalConfig {
    /// Inverse class frequency, normalised so present classes average 1.
    /// Classes with no samples get weight 0.
    pub fn inverse_frequency(counts: &[usize], gamma: f64) -> Self {
        let inv: Vec<f64> = counts.iter().map(|&c| if c > 0 { 1.0 / c as f64 } else { 0.0 }).collect();
        let present = counts.iter().filter(|&&c| c > 0).count().max(1);
        let mean = inv.iter().sum::<f64>() / present as f64;
        let alpha = inv.iter().map(|v| if mean > 0.0 { v / mean } else { 1.0 }).collect();
        Self { gamma, alpha }
    }

    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::invalid(format!("focal gamma {} must be finite and >= 0", self.gamma)));
        }
        if self.alpha.len() != n_classes || self.alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::invalid(format!("focal alpha needs {n_classes} nonnegative weights")));
        }
        Ok(())
    }

    fn alpha_of(&self, class: usize) -> f64 {
        self.alpha.get(class).copied().unwrap_or(1.0)
    }
}

/// Batch-mean `-log p(true class)`.
pub fn cross_entropy_loss(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    assert_eq!(probs.len(), labels.len(), "batch size mismatch");
    if probs.is_empty() {
        return 0.0;
    }
    probs.iter().zip(labels).map(|(p, &y)| -clip(p[y]).ln()).sum::<f64>() / probs.len() as f64
}

/// One focal term `alpha (1 - x)^gamma (-log x)` at clipped probability `x`.
pub fn focal_term(x: f64, alpha: f64, gamma: f64) -> f64 {
    let x = clip(x);
    alpha * (1.0 - x).powf(gamma) * -x.ln()
}

/// Batch-mean focal loss.
pub fn focal_loss(probs: &[Vec<f64>], labels: &[usize], cfg: &FocalConfig) -> f64 {
    assert_eq!(probs.len(), labels.len(), "batch size mismatch");
    if probs.is_empty() {
        return 0.0;
    }
    probs.iter().zip(labels).map(|(p, &y)| focal_term(p[y], cfg.alpha_of(y), cfg.gamma)).sum::<f64>()
        / probs.len() as f64
}

/// Focal loss of one sample given logits, and its gradient w.r.t. the logits.
pub fn focal_from_logits(logits: &[f64], label: usize, cfg: &FocalConfig) -> (f64, Vec<f64>) {
    let s = softmax(logits);
    let p = s[label];
    let x = clip(p);
    let (a, g) = (cfg.alpha_of(label), cfg.gamma);
    let loss = a * (1.0 - x).powf(g) * -x.ln();
    // d/dx of a (1-x)^g (-ln x)
    let mut dl_dx = -a * (1.0 - x).powf(g) / x;
    if g != 0.0 {
        dl_dx += a * g * (1.0 - x).powf(g - 1.0) * x.ln();
    }
    let dl_dp = dl_dx * clip_slope(p);
    let grad = s.iter().enumerate().map(|(j, &sj)| dl_dp * p * (f64::from(u8::from(j == label)) - sj)).collect();
    (loss, grad)
}

/// Cross-entropy of one sample given logits, and its logit gradient.
pub fn cross_entropy_from_logits(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    focal_from_logits(logits, label, &FocalConfig { gamma: 0.0, alpha: vec![1.0; logits.len()] })
}

/// Mean per-class binary cross-entropy over `K` independent sigmoid outputs,
/// and its logit gradient.
pub fn bce_from_logits(logits: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(logits.len(), targets.len(), "label width mismatch");
    let k = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &t) in logits.iter().zip(targets) {
        let s = sigmoid(z);
        let p = clip(s);
        loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        let dl_dp = -t / p + (1.0 - t) / (1.0 - p);
        grad.push(dl_dp * clip_slope(s) * s * (1.0 - s) / k);
    }
    (loss / k, grad)
}

/// Batch-mean binary cross-entropy over probabilities.
pub fn bce_loss(probs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    assert_eq!(probs.len(), targets.len(), "batch size mismatch");
    if probs.is_empty() {
        return 0.0;
    }
    let per: f64 = probs
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            p.iter().zip(t).map(|(&pi, &ti)| -(ti * clip(pi).ln() + (1.0 - ti) * (1.0 - clip(pi)).ln())).sum::<f64>()
                / p.len() as f64
        })
        .sum();
    per / probs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_values() {
        assert!((cross_entropy_loss(&[vec![0.5, 0.5]], &[0]) - 2f64.ln()).abs() < 1e-12);
        assert!((cross_entropy_loss(&[vec![0.25; 4]], &[3]) - 4f64.ln()).abs() < 1e-12);
        assert!(cross_entropy_loss(&[vec![1.0 - PROB_EPS, PROB_EPS]], &[0]) < 1e-6);
    }

    #[test]
    fn focal_hand_value() {
        let cfg = FocalConfig { gamma: 2.0, alpha: vec![0.25, 1.0] };
        let v = focal_loss(&[vec![0.9, 0.1]], &[0], &cfg);
        let want = 0.25 * 0.1f64.powi(2) * -(0.9f64.ln());
        assert!((v - want).abs() < 1e-15);
        assert!((v - 2.634e-4).abs() < 1e-7);
    }

    #[test]
    fn inverse_frequency_has_unit_mean() {
        let cfg = FocalConfig::inverse_frequency(&[100, 50, 25, 0], 2.0);
        assert_eq!(cfg.alpha[3], 0.0);
        let mean = cfg.alpha[..3].iter().sum::<f64>() / 3.0;
        assert!((mean - 1.0).abs() < 1e-12);
        assert!(cfg.alpha[2] > cfg.alpha[1] && cfg.alpha[1] > cfg.alpha[0]);
    }

    #[test]
    fn logit_gradients_match_differences() {
        let z = [0.3, -1.2, 0.8, 0.1];
        let cfg = FocalConfig { gamma: 2.0, alpha: vec![0.5, 1.5, 1.0, 2.0] };
        let (_, g) = focal_from_logits(&z, 2, &cfg);
        let (_, gb) = bce_from_logits(&z, &[1.0, 0.0, 1.0, 0.0]);
        let h = 1e-6;
        for j in 0..4 {
            let (mut zp, mut zm) = (z, z);
            zp[j] += h;
            zm[j] -= h;
            let fd = (focal_from_logits(&zp, 2, &cfg).0 - focal_from_logits(&zm, 2, &cfg).0) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-7, "focal {j}: {fd} vs {}", g[j]);
            let t = [1.0, 0.0, 1.0, 0.0];
            let fd = (bce_from_logits(&zp, &t).0 - bce_from_logits(&zm, &t).0) / (2.0 * h);
            assert!((fd - gb[j]).abs() < 1e-7, "bce {j}");
        }
    }
}
