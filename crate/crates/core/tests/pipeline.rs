use avn_core::harness::{run_experiment, ExperimentConfig, FOLD_REPORT_FILE};
use avn_core::phantom::{generate_phantom, HeadSpec, PhantomSample, PhantomSpec};
use avn_core::pipeline::{
    aggregate_subject, diagnose_boxes, diagnose_radiograph, radiograph_payload, render_report, Models, NO_FH_ADVISORY,
};
use avn_core::{NoteClass, Side, Stage, View};

fn models() -> Models {
    let mut m = Models::untrained(5, 32, 0.0625).unwrap();
    m.detector.inference.score_thresh = 0.0;
    m.config.cam = true;
    m
}

fn sample(stage: Stage, view: View, seed: u64) -> PhantomSample {
    let heads = vec![HeadSpec::new(stage, vec![], Side::Right), HeadSpec::absence(Side::Left)];
    generate_phantom(&PhantomSpec::new(heads, view, seed).with_size(256)).unwrap()
}

#[test]
fn records_satisfy_their_contract() {
    let m = models();
    let s = sample(Stage::III, View::AP, 3);
    let d = diagnose_radiograph(&s.image, "r1", &m).unwrap();
    assert!(!d.records.is_empty());
    assert!(d.advisory.is_none());
    for (k, r) in d.records.iter().enumerate() {
        r.check().unwrap();
        assert_eq!(r.id, format!("r1#{k}"));
        assert!(r.bbox.x_min >= 0.0 && r.bbox.y_min >= 0.0 && r.bbox.x_max <= 256.0 && r.bbox.y_max <= 256.0);
        for (raw, rect) in r.note_probs.iter().zip(&r.rectified_note_probs) {
            assert!(rect <= raw);
        }
        let cam = r.cam.as_ref().expect("cam requested");
        assert!(cam.to_image().data().iter().all(|v| (0.0..=1.0).contains(v)));
        if r.stage == Stage::Absence {
            assert!(r.notes.is_empty() && r.caption == "AVNFH absence: No findings");
        }
    }
}

#[test]
fn diagnosis_is_deterministic_and_survives_a_checkpoint_round_trip() {
    let m = models();
    let s = sample(Stage::II, View::FL, 8);
    let a = diagnose_radiograph(&s.image, "x", &m).unwrap();
    let dir = tempfile::tempdir().unwrap();
    m.save_dir(dir.path()).unwrap();
    let mut loaded = Models::load_dir(dir.path()).unwrap();
    loaded.detector.inference.score_thresh = 0.0;
    assert_eq!(a, diagnose_radiograph(&s.image, "x", &loaded).unwrap());
    assert_eq!(a, diagnose_radiograph(&s.image, "x", &m).unwrap());
}

#[test]
fn ground_truth_boxes_give_one_record_each() {
    let m = models();
    let s = sample(Stage::IV, View::AP, 12);
    let boxes: Vec<_> = s.ground_truth.iter().map(|t| (t.bbox, 1.0)).collect();
    let d = diagnose_boxes(&s.image, "gt", &m, &boxes).unwrap();
    assert_eq!(d.records.len(), 2);
    for (r, t) in d.records.iter().zip(&s.ground_truth) {
        assert_eq!(r.bbox, t.bbox);
    }
    let (png, text) = render_report(&s.image, &d.records).unwrap();
    assert_eq!(&png[1..4], b"PNG");
    assert_eq!(text.lines().filter(|l| l.contains("AVNFH")).count(), 2);
}

#[test]
fn empty_detection_yields_advisory() {
    let mut m = models();
    m.detector.inference.score_thresh = 1.0;
    let s = sample(Stage::II, View::AP, 1);
    let d = diagnose_radiograph(&s.image, "none", &m).unwrap();
    assert!(d.records.is_empty());
    let p = radiograph_payload(&d).unwrap();
    assert_eq!(p.advisory.as_deref(), Some(NO_FH_ADVISORY));
    assert_eq!(p.image_stage(), Stage::Absence);
}

#[test]
fn subject_takes_the_most_severe_view() {
    let m = models();
    let ap = sample(Stage::II, View::AP, 21);
    let fl = sample(Stage::II, View::FL, 21);
    let boxes = |s: &PhantomSample| s.ground_truth.iter().map(|t| (t.bbox, 1.0)).collect::<Vec<_>>();
    let da = diagnose_boxes(&ap.image, "S_AP", &m, &boxes(&ap)).unwrap();
    let df = diagnose_boxes(&fl.image, "S_FL", &m, &boxes(&fl)).unwrap();
    let recs: Vec<_> =
        da.records.iter().map(|r| (View::AP, r)).chain(df.records.iter().map(|r| (View::FL, r))).collect();
    let s = aggregate_subject("S", &recs).unwrap();
    let worst = recs.iter().map(|(_, r)| r.stage).max().unwrap();
    assert_eq!(s.final_stage, worst);
    assert_eq!(s.per_view[&View::AP].len(), 2);
    assert!(s.evidence.iter().all(|id| recs.iter().any(|(_, r)| &r.id == id && r.stage == worst)));
    assert!(aggregate_subject("S", &[]).is_err());
}

#[test]
fn notes_never_leave_their_stage() {
    let m = models();
    let s = sample(Stage::III, View::AP, 31);
    let boxes: Vec<_> = s.ground_truth.iter().map(|t| (t.bbox, 1.0)).collect();
    for r in diagnose_boxes(&s.image, "n", &m, &boxes).unwrap().records {
        assert!(r.notes.iter().all(|n: &NoteClass| n.owning_stage() == r.stage));
        assert_eq!(r.notes_low_confidence, r.stage != Stage::Absence && r.notes.is_empty());
    }
}

#[test]
fn smoke_cross_validation_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::smoke();
    cfg.out_dir = dir.path().to_path_buf();
    cfg.detector.max_epochs = 1;
    cfg.classifier.max_epochs = 1;
    cfg.bootstrap.n_resamples = 50;
    let r = run_experiment(&cfg).unwrap();
    assert_eq!((r.repetitions, r.folds, r.fold_results.len()), (1, 2, 2));
    assert!(r.n_test_images > 0);
    for key in [
        "staging_auc_II",
        "staging_presence_auc",
        "staging_pre_collapse_auc",
        "staging_post_collapse_auc",
        "detection_f1_at_0.5",
    ] {
        let s = r.summary.get(key).unwrap_or_else(|| panic!("summary lacks {key}"));
        assert!(s.ci_lo <= s.mean && s.mean <= s.ci_hi);
    }
    for f in &r.fold_results {
        assert_eq!(f.n_train_subjects + f.n_val_subjects, cfg.data.n_subjects - cfg.data.n_test_subjects);
        let report = avn_core::harness::fold_dir(&cfg.out_dir, f.repetition, f.fold).join(FOLD_REPORT_FILE);
        let json: serde_json::Value = serde_json::from_slice(&std::fs::read(report).unwrap()).unwrap();
        assert_eq!(json["staging"]["per_class"].as_array().unwrap().len(), Stage::COUNT);
    }
    assert!(dir.path().join("experiment.json").exists());
    assert_eq!(run_experiment(&cfg).unwrap(), r, "cached folds reload identically");
}
