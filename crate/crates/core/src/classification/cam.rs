//! Class activation maps from a global-average-pooled linear classifier.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imaging::ImageF32;
use crate::nn::Tensor;

/// Heat map normalised to `[0, 1]`, square, explaining one output class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamMap {
    pub size: usize,
    pub class_index: usize,
    pub heat: Vec<f32>,
}

/// `sum_ch w[ch] * features[ch]` for batch element 0, before any resampling.
pub fn weighted_feature_sum(features: &Tensor, weights: &[f32]) -> Vec<f32> {
    assert_eq!(features.c, weights.len(), "one weight per feature channel");
    let hw = features.h * features.w;
    let mut heat = vec![0.0f32; hw];
    for (ch, &wc) in weights.iter().enumerate() {
        for (h, &f) in heat.iter_mut().zip(features.map(ch, 0)) {
            *h += wc * f;
        }
    }
    heat
}

/// Min-max normalisation; a constant map becomes all zeros.
pub fn normalize_unit(values: &mut [f32]) {
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = hi - lo;
    if !(span > f32::EPSILON * hi.abs().max(1.0)) {
        values.iter_mut().for_each(|v| *v = 0.0);
    } else {
        values.iter_mut().for_each(|v| *v = ((*v - lo) / span).clamp(0.0, 1.0));
    }
}

impl CamMap {
    /// Weighted sum of feature maps, bilinearly upsampled to `out_size`, then normalised.
    pub fn from_features(features: &Tensor, weights: &[f32], class_index: usize, out_size: usize) -> CamMap {
        let raw = weighted_feature_sum(features, weights);
        let map = ImageF32::new(features.w, features.h, raw).expect("nonempty feature map");
        let mut heat = if features.w == out_size && features.h == out_size {
            map.into_data()
        } else {
            map.resize(out_size, out_size).into_data()
        };
        normalize_unit(&mut heat);
        CamMap { size: out_size, class_index, heat }
    }

    pub fn to_image(&self) -> ImageF32 {
        ImageF32::new(self.size, self.size, self.heat.clone()).expect("square heat map")
    }

    /// Heat resampled to an arbitrary rectangle.
    pub fn resized(&self, width: usize, height: usize) -> ImageF32 {
        self.to_image().resize(width, height)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        self.to_image().encode_png()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_weighted_sum() {
        let f = Tensor::from_vec(2, 1, 2, 2, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(weighted_feature_sum(&f, &[1.0, 2.0]), vec![1.0, 0.0, 0.0, 2.0]);
        let cam = CamMap::from_features(&f, &[1.0, 2.0], 0, 2);
        assert_eq!(cam.heat, vec![0.5, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn one_hot_weights_select_a_channel() {
        let data: Vec<f32> = (0..4 * 9).map(|i| ((i * 7) % 11) as f32).collect();
        let f = Tensor::from_vec(4, 1, 3, 3, data);
        let cam = CamMap::from_features(&f, &[0.0, 0.0, 0.0, 1.0], 3, 3);
        let mut want = f.map(3, 0).to_vec();
        normalize_unit(&mut want);
        assert_eq!(cam.heat, want);
    }

    #[test]
    fn constant_maps_normalise_to_zero() {
        let f = Tensor::from_vec(2, 1, 2, 2, vec![3.0; 8]);
        let cam = CamMap::from_features(&f, &[0.5, -1.0], 1, 8);
        assert_eq!(cam.heat.len(), 64);
        assert!(cam.heat.iter().all(|&v| v == 0.0));
    }
}
