use avn_core::classification::{focal_term, rectify_note_probs, softmax, CollapseGroup};
use avn_core::detection::BBox;
use avn_core::roi::{resample_fh, ResampleConfig};
use avn_core::{ImageF32, NoteClass, Stage};
use proptest::prelude::*;

fn probs(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0..4.0f64, k).prop_map(|z| softmax(&z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn focal_shrinks_as_gamma_grows(x in 1e-4..0.999f64, g in 0.0..5.0f64, dg in 0.01..3.0f64) {
        prop_assert!(focal_term(x, 1.0, g + dg) < focal_term(x, 1.0, g));
        let ratio = focal_term(x, 1.0, g) / focal_term(x, 1.0, 0.0);
        prop_assert!((ratio - (1.0 - x).powf(g)).abs() <= 1e-12);
    }

    #[test]
    fn rectification_never_raises_a_probability(notes in prop::collection::vec(0.0..1.0f64, NoteClass::COUNT), stage in probs(Stage::COUNT)) {
        let n: [f64; NoteClass::COUNT] = notes.try_into().unwrap();
        let s: [f64; Stage::COUNT] = stage.try_into().unwrap();
        for (out, inp) in rectify_note_probs(&n, &s).iter().zip(n) {
            prop_assert!(*out <= inp);
        }
    }

    #[test]
    fn groupings_follow_the_stage_argmax(p in probs(Stage::COUNT)) {
        let stage = Stage::argmax_severe(&p);
        prop_assert_eq!(stage.is_present(), stage.collapse_group() != CollapseGroup::Absence);
        let expected = match stage {
            Stage::Absence => CollapseGroup::Absence,
            Stage::II => CollapseGroup::PreCollapse,
            Stage::III | Stage::IV => CollapseGroup::PostCollapse,
        };
        prop_assert_eq!(stage.collapse_group(), expected);
    }

    #[test]
    fn resampling_count_size_and_coverage(
        cx in 40.0..88.0f64, cy in 40.0..88.0f64, side in 8.0..60.0f64,
        k in 1usize..12, typical in any::<bool>(), out in 4usize..40,
    ) {
        let img = ImageF32::new(128, 128, (0..128 * 128).map(|i| (i % 97) as f32 / 97.0).collect()).unwrap();
        let b = BBox::from_center(cx, cy, side, side).unwrap();
        let cfg = ResampleConfig { n_samples: k, typical_samples: 2 * k, scale_range: [0.85, 1.05], output_size: out };
        let crops = resample_fh(&img, &b, &cfg, typical).unwrap();
        prop_assert_eq!(crops.len(), if typical { 2 * k } else { k });
        for c in &crops {
            prop_assert_eq!((c.image.width(), c.image.height()), (out, out));
        }
        if crops.len() > 1 {
            let (first, last) = (&crops[0], crops.last().unwrap());
            prop_assert!((first.scale - 0.85).abs() < 1e-12 && (last.scale - 1.05).abs() < 1e-12);
            let (a, z) = (first.region, last.region);
            prop_assert!(z.x_min < a.x_min && z.y_min < a.y_min && z.x_max > a.x_max && z.y_max > a.y_max);
        }
    }
}
