use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::AugmentConfig;
use crate::classification::{NoteClass, Side, Stage, View};
use crate::imaging::ImageF32;

/// Every label attached to one femoral-head crop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadLabels {
    pub side: Side,
    pub view: View,
    pub stage: Stage,
    pub notes: Vec<NoteClass>,
}

/// Rigid warp about the crop centre: rotate by `deg` (counter-clockwise on
/// screen), then shift by `(tx, ty)` pixels. Bilinear, border-clamped.
pub fn warp(crop: &ImageF32, deg: f64, tx: f64, ty: f64) -> ImageF32 {
    if deg == 0.0 && tx == 0.0 && ty == 0.0 {
        return crop.clone();
    }
    let (w, h) = (crop.width(), crop.height());
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (s, c) = deg.to_radians().sin_cos();
    let mut data = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            // inverse map: undo the shift, then rotate back
            let (px, py) = (u as f64 + 0.5 - tx - cx, v as f64 + 0.5 - ty - cy);
            let (sx, sy) = (c * px - s * py, s * px + c * py);
            data.push(crop.sample(sx + cx, sy + cy));
        }
    }
    ImageF32::new(w, h, data).expect("same shape")
}

/// Random rotation, translation and horizontal flip. A flip toggles the side
/// label when `swap_side_on_flip` is set; no other label ever changes.
/// Exactly four draws are taken from `rng` regardless of the configuration.
pub fn augment<R: Rng>(
    crop: &ImageF32,
    labels: &HeadLabels,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (ImageF32, HeadLabels) {
    let u: [f64; 4] = std::array::from_fn(|_| rng.random::<f64>());
    let deg = (2.0 * u[0] - 1.0) * cfg.rotation_deg;
    let side = crop.width() as f64;
    let tx = (2.0 * u[1] - 1.0) * cfg.translation * side;
    let ty = (2.0 * u[2] - 1.0) * cfg.translation * side;
    let flip = u[3] < cfg.flip_prob;
    let mut out = warp(crop, deg, tx, ty);
    let mut labels = labels.clone();
    if flip {
        out = out.flip_horizontal();
        if cfg.swap_side_on_flip {
            labels.side = labels.side.flipped();
        }
    }
    (out, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labels() -> HeadLabels {
        HeadLabels { side: Side::Left, view: View::FL, stage: Stage::III, notes: vec![NoteClass::FhDeformation] }
    }

    fn disc(n: usize) -> ImageF32 {
        let c = n as f64 / 2.0;
        let data = (0..n * n)
            .map(|i| {
                let (x, y) = ((i % n) as f64 + 0.5 - c, (i / n) as f64 + 0.5 - c);
                let r = (x * x + y * y).sqrt() / c;
                (0.2 + 0.6 * (-(r * 1.6).powi(2)).exp() + 0.1 * (x / c)) as f32
            })
            .collect();
        ImageF32::new(n, n, data).unwrap()
    }

    #[test]
    fn zero_config_is_identity() {
        let img = disc(32);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (out, l) = augment(&img, &labels(), &AugmentConfig::none(), &mut rng);
        assert_eq!(out, img);
        assert_eq!(l, labels());
    }

    #[test]
    fn forced_flip_swaps_side_only() {
        let img = disc(16);
        let cfg = AugmentConfig { rotation_deg: 0.0, translation: 0.0, flip_prob: 1.0, swap_side_on_flip: true };
        let (out, l) = augment(&img, &labels(), &cfg, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(out, img.flip_horizontal());
        assert_eq!(l.side, Side::Right);
        assert_eq!((l.view, l.stage, &l.notes), (View::FL, Stage::III, &labels().notes));
        let keep = AugmentConfig { swap_side_on_flip: false, ..cfg };
        assert_eq!(augment(&img, &labels(), &keep, &mut ChaCha8Rng::seed_from_u64(2)).1.side, Side::Left);
    }

    #[test]
    fn rotation_round_trip_is_interpolation_only() {
        let img = disc(64);
        let back = warp(&warp(&img, 10.0, 0.0, 0.0), -10.0, 0.0, 0.0);
        let mae: f64 = img.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / 4096.0;
        assert!(mae < 0.02, "mae {mae}");
    }
}
