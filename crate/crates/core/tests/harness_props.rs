use std::collections::{BTreeMap, BTreeSet};

use avn_core::detection::BBox;
use avn_core::evaluation::{subject_presence_sensitivity, ViewCall};
use avn_core::harness::{augment, repetition_summary, split_folds, AugmentConfig, HeadLabels};
use avn_core::pipeline::{aggregate_subject, FhRecord};
use avn_core::{ImageF32, NoteClass, Side, Stage, View};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn stage() -> impl Strategy<Value = Stage> {
    (0usize..Stage::COUNT).prop_map(|i| Stage::from_index(i).unwrap())
}

fn record(id: &str, side: Side, view: View, stage: Stage) -> FhRecord {
    let mut stage_probs = [0.0; Stage::COUNT];
    stage_probs[stage.index()] = 1.0;
    FhRecord {
        id: id.to_string(),
        image_id: id.split('#').next().unwrap().to_string(),
        bbox: BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
        score: 0.9,
        side,
        side_probs: [0.5, 0.5],
        view,
        view_probs: [0.5, 0.5],
        stage,
        stage_probs,
        note_probs: [0.0; NoteClass::COUNT],
        rectified_note_probs: [0.0; NoteClass::COUNT],
        notes: Vec::new(),
        notes_low_confidence: false,
        caption: String::new(),
        cam: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn folds_partition_subjects_without_leakage(n in 2usize..120, k in 2usize..11, seed in any::<u64>(), rep in 0usize..5) {
        prop_assume!(n >= k);
        let ids: Vec<String> = (0..n).map(|i| format!("S{i:04}")).collect();
        let plan = split_folds(&ids, k, seed, rep).unwrap();
        prop_assert_eq!(&plan, &split_folds(&ids, k, seed, rep).unwrap());
        let all: BTreeSet<String> = ids.iter().cloned().collect();
        let mut seen = BTreeSet::new();
        for f in 0..k {
            let (train, val) = plan.split(f);
            prop_assert!(train.is_disjoint(&val));
            prop_assert_eq!(train.union(&val).cloned().collect::<BTreeSet<_>>(), all.clone());
            for s in &val {
                prop_assert!(seen.insert(s.clone()), "{} in two validation folds", s);
            }
        }
        prop_assert_eq!(seen, all);
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn augmentation_keeps_stage_and_flips_side_only_with_swap(
        st in stage(), side in any::<bool>(), seed in any::<u64>(),
        rot in 0.0..20.0f64, tr in 0.0..0.1f64, flip in 0.0..1.0f64, swap in any::<bool>(),
    ) {
        let side = if side { Side::Left } else { Side::Right };
        let labels = HeadLabels { side, view: View::FL, stage: st, notes: st.notes().first().copied().into_iter().collect() };
        let crop = ImageF32::new(8, 8, (0..64).map(|i| i as f32 / 64.0).collect()).unwrap();
        let cfg = AugmentConfig { rotation_deg: rot, translation: tr, flip_prob: flip, swap_side_on_flip: swap };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (img, out) = augment(&crop, &labels, &cfg, &mut rng);
        prop_assert_eq!(out.stage, st);
        prop_assert_eq!(out.view, labels.view);
        prop_assert_eq!(&out.notes, &labels.notes);
        prop_assert_eq!((img.width(), img.height()), (8, 8));
        if !swap {
            prop_assert_eq!(out.side, side);
        }
        // replay the flip draw: the fourth uniform decides it
        let mut replay = ChaCha8Rng::seed_from_u64(seed);
        let u: [f64; 4] = std::array::from_fn(|_| rand::Rng::random::<f64>(&mut replay));
        let flipped = u[3] < flip;
        prop_assert_eq!(out.side != side, flipped && swap);
    }

    #[test]
    fn repetition_interval_uses_the_normal_formula(v in prop::collection::vec(0.0..1.0f64, 2..20)) {
        let s = repetition_summary(&v);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        prop_assert!((s.mean - mean).abs() < 1e-12);
        prop_assert!((s.ci_lo - (mean - 1.96 * sd / n.sqrt())).abs() < 1e-12);
        prop_assert!((s.ci_hi - (mean + 1.96 * sd / n.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn aggregation_ignores_record_order(stages in prop::collection::vec((stage(), any::<bool>(), any::<bool>()), 1..8), seed in any::<u64>()) {
        let recs: Vec<(View, FhRecord)> = stages
            .iter()
            .enumerate()
            .map(|(i, &(s, l, ap))| {
                let v = if ap { View::AP } else { View::FL };
                (v, record(&format!("img{i}#0"), if l { Side::Left } else { Side::Right }, v, s))
            })
            .collect();
        let refs: Vec<(View, &FhRecord)> = recs.iter().map(|(v, r)| (*v, r)).collect();
        let a = aggregate_subject("S1", &refs).unwrap();
        let mut shuffled = refs.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let b = aggregate_subject("S1", &shuffled).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.final_stage, stages.iter().map(|s| s.0).max().unwrap());
        let doubled: Vec<(View, &FhRecord)> = refs.iter().chain(refs.iter()).copied().collect();
        prop_assert_eq!(aggregate_subject("S1", &doubled).unwrap().final_stage, a.final_stage);
    }

    #[test]
    fn two_views_never_lower_subject_sensitivity(
        subjects in prop::collection::vec((stage(), prop::collection::vec((any::<bool>(), stage()), 0..4)), 1..30),
    ) {
        let mut truth = BTreeMap::new();
        let mut calls = Vec::new();
        for (i, (t, preds)) in subjects.iter().enumerate() {
            let id = format!("S{i}");
            truth.insert(id.clone(), *t);
            for &(ap, s) in preds {
                calls.push(ViewCall { subject_id: id.clone(), view: if ap { View::AP } else { View::FL }, stage: s });
            }
        }
        let sens = |v: &[View]| subject_presence_sensitivity(&calls, &truth, v);
        if let (Some(both), Some(ap), Some(fl)) = (sens(&[View::AP, View::FL]), sens(&[View::AP]), sens(&[View::FL])) {
            prop_assert!(both >= ap && both >= fl);
        }
    }
}
