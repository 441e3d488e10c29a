//! Multi-scale resampling of detected femoral heads into fixed-size crops.

use serde::{Deserialize, Serialize};

use crate::detection::BBox;
use crate::error::{Error, Result};
use crate::imaging::ImageF32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleConfig {
    /// Crops per head.
    pub n_samples: usize,
    /// Crops per head flagged `typical`.
    pub typical_samples: usize,
    /// Inclusive range of the box scaling factor `s`.
    pub scale_range: [f64; 2],
    /// Side of the square output crop.
    pub output_size: usize,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self { n_samples: 5, typical_samples: 10, scale_range: [0.85, 1.05], output_size: 224 }
    }
}

impl ResampleConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid(format!("scale range {:?} must satisfy 0 < lo <= hi", self.scale_range)));
        }
        if self.n_samples == 0 || self.typical_samples == 0 || self.output_size == 0 {
            return Err(Error::invalid("sample counts and output size must be positive"));
        }
        Ok(())
    }

    pub fn count(&self, typical: bool) -> usize {
        if typical {
            self.typical_samples
        } else {
            self.n_samples
        }
    }

    /// `k` scales spaced linearly over the range, endpoints included; a single
    /// sample sits at the midpoint.
    pub fn scales(&self, typical: bool) -> Vec<f64> {
        let k = self.count(typical);
        let [lo, hi] = self.scale_range;
        if k == 1 {
            return vec![(lo + hi) / 2.0];
        }
        (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
    }
}

/// One resampled head crop.
#[derive(Debug, Clone)]
pub struct Crop {
    pub image: ImageF32,
    pub scale: f64,
    /// Source region after scaling, before clamping.
    pub region: BBox,
    /// Source region actually sampled.
    pub clamped: BBox,
}

/// Crops `bbox` scaled about its centre by `s`, clamped to the image.
pub fn crop_at_scale(image: &ImageF32, bbox: &BBox, s: f64, output_size: usize) -> Result<Crop> {
    let (w, h) = (image.width() as f64, image.height() as f64);
    let region = bbox.scaled(s);
    let clamped =
        region.clamp_to(w, h).ok_or_else(|| Error::invalid(format!("box {bbox:?} lies outside the {w}x{h} image")))?;
    Ok(Crop { image: image.crop_resize(clamped.as_array(), output_size, output_size), scale: s, region, clamped })
}

/// All training crops of one head: `cfg.count(typical)` scales.
pub fn resample_fh(image: &ImageF32, bbox: &BBox, cfg: &ResampleConfig, typical: bool) -> Result<Vec<Crop>> {
    cfg.validate()?;
    cfg.scales(typical).into_iter().map(|s| crop_at_scale(image, bbox, s, cfg.output_size)).collect()
}

/// The single `s = 1` crop used at inference time.
pub fn inference_crop(image: &ImageF32, bbox: &BBox, output_size: usize) -> Result<ImageF32> {
    Ok(crop_at_scale(image, bbox, 1.0, output_size)?.image)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_image(w: usize, h: usize) -> ImageF32 {
        let data = (0..w * h).map(|i| ((i % w) as f32 / w as f32 + (i / w) as f32 / h as f32) / 2.0).collect();
        ImageF32::new(w, h, data).unwrap()
    }

    #[test]
    fn five_and_ten_scales() {
        let cfg = ResampleConfig::default();
        let s = cfg.scales(false);
        let want = [0.85, 0.90, 0.95, 1.00, 1.05];
        assert_eq!(s.len(), 5);
        for (a, b) in s.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        let t = cfg.scales(true);
        assert_eq!(t.len(), 10);
        assert!((t[0] - 0.85).abs() < 1e-12 && (t[9] - 1.05).abs() < 1e-12);
    }

    #[test]
    fn identity_scale_equals_plain_crop() {
        let img = ramp_image(100, 80);
        let b = BBox::new(10.0, 20.0, 50.0, 60.0).unwrap();
        let cfg = ResampleConfig { n_samples: 1, scale_range: [1.0, 1.0], output_size: 32, ..Default::default() };
        let crops = resample_fh(&img, &b, &cfg, false).unwrap();
        assert_eq!(crops.len(), 1);
        assert_eq!(crops[0].image, img.crop_resize(b.as_array(), 32, 32));
    }

    #[test]
    fn clamps_at_border_and_rejects_outside() {
        let img = ramp_image(50, 50);
        let b = BBox::new(30.0, 30.0, 60.0, 60.0).unwrap();
        let c = crop_at_scale(&img, &b, 1.0, 8).unwrap();
        assert_eq!(c.clamped.as_array(), [30.0, 30.0, 50.0, 50.0]);
        assert!(c.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let far = BBox::new(200.0, 200.0, 210.0, 210.0).unwrap();
        assert!(crop_at_scale(&img, &far, 1.0, 8).is_err());
    }

    #[test]
    fn invalid_config() {
        let cfg = ResampleConfig { scale_range: [1.1, 0.9], ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = ResampleConfig { n_samples: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
