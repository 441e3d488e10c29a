use serde::{Deserialize, Serialize};

use super::boxes::BBox;
use crate::error::{Error, Result};

/// Center-size encoding variances for (center, size).
pub const VARIANCES: [f64; 2] = [0.1, 0.2];

/// Square default boxes tiled over several feature scales of a square input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    /// Side of the (square) detector input in pixels.
    pub input_size: usize,
    /// Feature-map side per scale, finest first.
    pub feature_sizes: Vec<usize>,
    /// Anchor side per scale as a fraction of the input side.
    pub anchor_fractions: Vec<f64>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self { input_size: 300, feature_sizes: vec![19, 10, 5], anchor_fractions: vec![0.15, 0.3, 0.5] }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_sizes.is_empty()
            || self.feature_sizes.len() != self.anchor_fractions.len()
            || self.feature_sizes.contains(&0)
            || self.anchor_fractions.iter().any(|f| !(*f > 0.0 && f.is_finite()))
            || self.input_size == 0
        {
            return Err(Error::invalid(format!("bad anchor config {self:?}")));
        }
        Ok(())
    }
}

/// Ordered anchors: scale by scale, row-major within each feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub anchors: Vec<BBox>,
    pub scale_index: Vec<usize>,
}

impl AnchorSet {
    pub fn build(cfg: &AnchorConfig) -> Result<Self> {
        cfg.validate()?;
        let side = cfg.input_size as f64;
        let mut anchors = Vec::new();
        let mut scale_index = Vec::new();
        for (s, (&f, &frac)) in cfg.feature_sizes.iter().zip(&cfg.anchor_fractions).enumerate() {
            let step = side / f as f64;
            let size = frac * side;
            for gy in 0..f {
                for gx in 0..f {
                    let cx = (gx as f64 + 0.5) * step;
                    let cy = (gy as f64 + 0.5) * step;
                    anchors.push(BBox::from_center(cx, cy, size, size)?);
                    scale_index.push(s);
                }
            }
        }
        Ok(Self { anchors, scale_index })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// `(dcx, dcy, dlog w, dlog h)` of `gt` relative to `anchor`, divided by the variances.
pub fn encode(anchor: &BBox, gt: &BBox) -> [f64; 4] {
    let (acx, acy) = anchor.center();
    let (gcx, gcy) = gt.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    [
        (gcx - acx) / (aw * VARIANCES[0]),
        (gcy - acy) / (ah * VARIANCES[0]),
        (gt.width() / aw).ln() / VARIANCES[1],
        (gt.height() / ah).ln() / VARIANCES[1],
    ]
}

/// Inverse of [`encode`]. Log-size offsets are clipped so `exp` stays finite.
pub fn decode(anchor: &BBox, off: &[f64; 4]) -> BBox {
    let (acx, acy) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let cx = acx + off[0] * VARIANCES[0] * aw;
    let cy = acy + off[1] * VARIANCES[0] * ah;
    let w = aw * (off[2] * VARIANCES[1]).clamp(-10.0, 10.0).exp();
    let h = ah * (off[3] * VARIANCES[1]).clamp(-10.0, 10.0).exp();
    BBox { x_min: cx - w / 2.0, y_min: cy - h / 2.0, x_max: cx + w / 2.0, y_max: cy + h / 2.0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_layout() {
        let set = AnchorSet::build(&AnchorConfig::default()).unwrap();
        assert_eq!(set.len(), 19 * 19 + 10 * 10 + 5 * 5);
        assert_eq!(set.scale_index[0], 0);
        assert_eq!(*set.scale_index.last().unwrap(), 2);
        let first = set.anchors[0];
        assert!((first.width() - 45.0).abs() < 1e-9);
        assert!((first.center().0 - 300.0 / 38.0).abs() < 1e-9);
        assert_eq!(set, AnchorSet::build(&AnchorConfig::default()).unwrap());
    }

    #[test]
    fn encode_decode_round_trip() {
        let a = BBox::new(10.0, 20.0, 55.0, 65.0).unwrap();
        let g = BBox::new(13.5, 18.0, 61.0, 70.25).unwrap();
        let d = decode(&a, &encode(&a, &g));
        for (x, y) in d.as_array().iter().zip(g.as_array()) {
            assert!((x - y).abs() < 1e-6);
        }
        assert_eq!(encode(&a, &a), [0.0; 4]);
    }
}
