use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Task, TrainConfig};
use super::data::{
    head_crops, head_labels, load_images, ClassifierTask, CropSet, CropSource, DetectorTask, LoadedImage,
};
use super::folds::split_folds;
use super::trainer::{fit, TrainLog};
use crate::classification::{BackboneArch, Classifier, ClassifierArch, FocalConfig, HeadKind, NoteClass, Stage, View};
use crate::detection::{BBox, Detection, Detector, DetectorArch};
use crate::error::{Error, Result};
use crate::evaluation::{
    auto_iou_threshold, binary_report, default_iou_grid, detection_prf, greedy_pairs, notes_report, staging_report,
    subject_presence_sensitivity, BinaryReport, BootstrapConfig, IouRule, NotesReport, Prf, StagingReport, ViewCall,
};
use crate::phantom::{generate_dataset, Manifest, SplitTag};
use crate::pipeline::{diagnose_boxes, FhRecord, Models, PipelineConfig};

/// IoU a detection needs to be credited to a ground-truth head.
pub const HEAD_MATCH_IOU: f64 = 0.5;

pub const CI_FORMULA: &str = "mean +/- 1.96 * sd / sqrt(R), sd over the R repetition-level values (n - 1 denominator)";

/// Stable per-task seed derived from a run seed.
pub fn task_seed(seed: u64, task: Task) -> u64 {
    let k = match task {
        Task::Detector => 1,
        Task::Side => 2,
        Task::View => 3,
        Task::Stage => 4,
        Task::Notes => 5,
    };
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k)
}

/// Reads the configured manifest, or generates the phantom set under
/// `out_dir/data` (reusing an earlier generation when present).
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Manifest> {
    if let Some(m) = &cfg.data.manifest {
        return Manifest::read(m);
    }
    let dir = cfg.data_dir();
    let path = dir.join("manifest.jsonl");
    if path.exists() {
        let m = Manifest::read(&path)?;
        if m.validate(true).is_ok() {
            return Ok(m);
        }
    }
    generate_dataset(&cfg.data.dataset(&dir, cfg.seed))
}

pub fn train_detector(tcfg: &TrainConfig, train: &[LoadedImage], val: &[LoadedImage]) -> Result<(Detector, TrainLog)> {
    let det = Detector::new(DetectorArch::default(), tcfg.seed)?;
    let mut task = DetectorTask::new(det, train, val, tcfg.augment.flip_prob)?;
    let log = fit(&mut task, tcfg)?;
    Ok((task.model, log))
}

pub fn new_classifier(head: HeadKind, tcfg: &TrainConfig) -> Result<Classifier> {
    let backbone = BackboneArch { width_mult: tcfg.width_mult, in_channels: 3, input_size: tcfg.crop_size };
    Classifier::new(ClassifierArch { head, backbone }, tcfg.seed)
}

/// Trains one classifier head, optionally starting from another model's backbone.
/// The stage head uses focal loss weighted by inverse class frequency.
pub fn train_classifier(
    head: HeadKind,
    tcfg: &TrainConfig,
    train: &CropSet,
    val: &CropSet,
    init_from: Option<&Classifier>,
) -> Result<(Classifier, TrainLog)> {
    let mut model = new_classifier(head, tcfg)?;
    if let Some(src) = init_from {
        model.transfer_init(src)?;
    }
    if head == HeadKind::Stage {
        let mut counts = [0usize; Stage::COUNT];
        for l in &train.labels {
            counts[l.stage.index()] += 1;
        }
        model.focal = FocalConfig::inverse_frequency(&counts, tcfg.focal_gamma);
    }
    let mut task = ClassifierTask::new(model, train, val, tcfg.augment);
    let log = fit(&mut task, &TrainConfig { task: task_of(head), ..tcfg.clone() })?;
    Ok((task.model, log))
}

fn task_of(head: HeadKind) -> Task {
    match head {
        HeadKind::Side => Task::Side,
        HeadKind::View => Task::View,
        HeadKind::Stage => Task::Stage,
        HeadKind::Notes => Task::Notes,
    }
}

/// The five trained networks and their training logs.
#[derive(Debug, Clone)]
pub struct TrainedBundle {
    pub models: Models,
    pub logs: BTreeMap<String, TrainLog>,
}

/// Trains detector, side, view, stage and notes models. Classifiers learn from
/// resampled ground-truth crops and validate on `s = 1` crops. With
/// `cfg.transfer` the stage model starts from the view model and the notes
/// model from the stage model.
pub fn train_bundle(
    cfg: &ExperimentConfig,
    train: &[LoadedImage],
    val: &[LoadedImage],
    seed: u64,
) -> Result<TrainedBundle> {
    cfg.validate()?;
    let mut logs = BTreeMap::new();
    let dcfg = cfg.detector.for_task(Task::Detector, task_seed(seed, Task::Detector));
    let (detector, log) = train_detector(&dcfg, train, val)?;
    log::info!("detector: best epoch {} val loss {:.4}", log.best_epoch, log.best_val_loss);
    logs.insert("detector".to_string(), log);

    let size = cfg.classifier.crop_size;
    let train_crops = head_crops(train, CropSource::Truth, Some(&cfg.resample), size)?;
    let val_crops = head_crops(val, CropSource::Truth, None, size)?;
    let mut trained: BTreeMap<HeadKind, Classifier> = BTreeMap::new();
    for head in [HeadKind::Side, HeadKind::View, HeadKind::Stage, HeadKind::Notes] {
        let task = task_of(head);
        let tcfg = cfg.classifier.for_task(task, task_seed(seed, task));
        let init = match head {
            HeadKind::Stage if cfg.transfer => trained.get(&HeadKind::View),
            HeadKind::Notes if cfg.transfer => trained.get(&HeadKind::Stage),
            _ => None,
        };
        let (model, log) = train_classifier(head, &tcfg, &train_crops, &val_crops, init)?;
        log::info!("{}: best epoch {} val loss {:.4}", head.tag(), log.best_epoch, log.best_val_loss);
        logs.insert(head.tag().to_string(), log);
        trained.insert(head, model);
    }
    let mut take = |h: HeadKind| trained.remove(&h).expect("trained head");
    let mut models = Models::new(
        detector,
        take(HeadKind::Side),
        take(HeadKind::View),
        take(HeadKind::Stage),
        take(HeadKind::Notes),
    )?;
    models.config = PipelineConfig { resample: cfg.resample, ..cfg.pipeline.clone() };
    Ok(TrainedBundle { models, logs })
}

/// Pipeline output for one test radiograph plus the head assignment.
#[derive(Debug, Clone)]
pub struct ImagePrediction {
    pub image_id: String,
    pub detections: Vec<Detection>,
    pub records: Vec<FhRecord>,
    /// For each ground-truth head, the index of the record credited to it.
    pub head_match: Vec<Option<usize>>,
}

/// Runs the full pipeline (without CAMs) on every image.
pub fn predict_images(models: &Models, images: &[LoadedImage]) -> Result<Vec<ImagePrediction>> {
    let mut eval_models_cfg = models.config.clone();
    eval_models_cfg.cam = false;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(8) {
        let imgs: Vec<_> = chunk.iter().map(|li| li.image.clone()).collect();
        let dets = models.detector.detect_batch(&imgs)?;
        for (li, d) in chunk.iter().zip(dets) {
            let boxes: Vec<(BBox, f64)> = d.iter().map(|x| (x.bbox, x.score)).collect();
            let records = diagnose_with(models, &eval_models_cfg, li, &boxes)?;
            let preds: Vec<BBox> = boxes.iter().map(|b| b.0).collect();
            out.push(ImagePrediction {
                image_id: li.id(),
                head_match: match_heads(&preds, &li.gt_boxes()),
                detections: d,
                records,
            });
        }
    }
    Ok(out)
}

fn diagnose_with(
    models: &Models,
    cfg: &PipelineConfig,
    li: &LoadedImage,
    boxes: &[(BBox, f64)],
) -> Result<Vec<FhRecord>> {
    if cfg.cam == models.config.cam {
        return Ok(diagnose_boxes(&li.image, &li.id(), models, boxes)?.records);
    }
    let mut m = models.clone();
    m.config = cfg.clone();
    Ok(diagnose_boxes(&li.image, &li.id(), &m, boxes)?.records)
}

/// Index of the prediction credited to each ground truth at [`HEAD_MATCH_IOU`].
pub fn match_heads(preds: &[BBox], gts: &[BBox]) -> Vec<Option<usize>> {
    let mut out = vec![None; gts.len()];
    for (p, g, v) in greedy_pairs(preds, gts) {
        if IouRule::Strict.passes(v, HEAD_MATCH_IOU) {
            out[g] = Some(p);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub iou_threshold: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub rows: Vec<DetectionRow>,
    /// Highest grid threshold with precision 1; `None` if none reaches it.
    pub auto_threshold: Option<f64>,
    pub at_half: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSensitivity {
    pub ap: Option<f64>,
    pub fl: Option<f64>,
    pub both: Option<f64>,
    pub n_diseased_subjects: usize,
}

/// Metrics of one trained bundle on a held-out set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_images: usize,
    pub n_heads: usize,
    /// Ground-truth heads without a credited detection; scored as Absence.
    pub n_missed_heads: usize,
    pub detection: DetectionReport,
    pub staging: StagingReport,
    /// Over heads with a credited detection.
    pub side: BinaryReport,
    pub view: BinaryReport,
    pub notes: NotesReport,
    pub subject_sensitivity: SubjectSensitivity,
}

pub fn detection_report(preds: &[Vec<BBox>], gts: &[Vec<BBox>]) -> DetectionReport {
    let grid = default_iou_grid();
    let rows = grid
        .iter()
        .map(|&t| {
            let p = detection_prf(preds, gts, t, IouRule::Strict);
            DetectionRow { iou_threshold: t, precision: p.precision, recall: p.recall, f1: p.f1 }
        })
        .collect();
    DetectionReport {
        rows,
        auto_threshold: auto_iou_threshold(preds, gts, &grid, IouRule::Strict).ok(),
        at_half: detection_prf(preds, gts, 0.5, IouRule::Strict),
    }
}

fn absence_one_hot() -> [f64; Stage::COUNT] {
    let mut p = [0.0; Stage::COUNT];
    p[Stage::Absence.index()] = 1.0;
    p
}

/// Scores pipeline predictions against the manifest truth.
pub fn evaluate_predictions(
    images: &[LoadedImage],
    preds: &[ImagePrediction],
    boot: Option<&BootstrapConfig>,
    note_tau: f64,
) -> EvalReport {
    let box_preds: Vec<Vec<BBox>> = preds.iter().map(|p| p.detections.iter().map(|d| d.bbox).collect()).collect();
    let box_gts: Vec<Vec<BBox>> = images.iter().map(LoadedImage::gt_boxes).collect();
    let (mut stage_p, mut stage_t) = (Vec::new(), Vec::new());
    let (mut side_p, mut side_t, mut view_p, mut view_t) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut note_p, mut note_t) = (Vec::new(), Vec::new());
    let mut missed = 0;
    let mut calls = Vec::new();
    let mut subject_truth: BTreeMap<String, Stage> = BTreeMap::new();
    for (li, p) in images.iter().zip(preds) {
        for (k, m) in p.head_match.iter().enumerate() {
            let truth = head_labels(&li.record, k);
            stage_t.push(truth.stage);
            match m {
                Some(i) => {
                    let r = &p.records[*i];
                    stage_p.push(r.stage_probs);
                    side_p.push(r.side_probs.to_vec());
                    side_t.push(truth.side.index());
                    view_p.push(r.view_probs.to_vec());
                    view_t.push(truth.view.index());
                    note_p.push(r.note_probs);
                    note_t.push(NoteClass::multi_hot(&truth.notes));
                }
                None => {
                    missed += 1;
                    stage_p.push(absence_one_hot());
                }
            }
            let e = subject_truth.entry(li.record.subject_id.clone()).or_insert(Stage::Absence);
            *e = (*e).max(truth.stage);
        }
        let call = p.records.iter().map(|r| r.stage).max().unwrap_or(Stage::Absence);
        calls.push(ViewCall { subject_id: li.record.subject_id.clone(), view: li.record.view, stage: call });
    }
    let sens = |views: &[View]| subject_presence_sensitivity(&calls, &subject_truth, views);
    EvalReport {
        n_images: images.len(),
        n_heads: stage_t.len(),
        n_missed_heads: missed,
        detection: detection_report(&box_preds, &box_gts),
        staging: staging_report(&stage_p, &stage_t, boot),
        side: binary_report(&side_p, &side_t),
        view: binary_report(&view_p, &view_t),
        notes: notes_report(&note_p, &note_t, note_tau),
        subject_sensitivity: SubjectSensitivity {
            ap: sens(&[View::AP]),
            fl: sens(&[View::FL]),
            both: sens(&[View::AP, View::FL]),
            n_diseased_subjects: subject_truth.values().filter(|s| s.is_present()).count(),
        },
    }
}

pub fn evaluate_bundle(models: &Models, test: &[LoadedImage], boot: Option<&BootstrapConfig>) -> Result<EvalReport> {
    let preds = predict_images(models, test)?;
    Ok(evaluate_predictions(test, &preds, boot, models.config.note_tau))
}

/// Scalar metrics aggregated across folds and repetitions.
pub fn key_metrics(r: &EvalReport) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: Option<f64>| {
        if let Some(v) = v {
            m.insert(k.to_string(), v);
        }
    };
    put("detection_f1_at_0.5", Some(r.detection.at_half.f1));
    put("staging_macro_auc", r.staging.macro_auc);
    put("staging_presence_auc", r.staging.presence_auc);
    put("staging_pre_collapse_auc", r.staging.pre_collapse_auc);
    put("staging_post_collapse_auc", r.staging.post_collapse_auc);
    put("staging_accuracy", Some(r.staging.accuracy));
    put("staging_macro_f1", r.staging.macro_f1);
    for c in &r.staging.per_class {
        put(&format!("staging_auc_{}", c.stage.label()), c.auc);
    }
    put("side_accuracy", (r.side.n > 0).then_some(r.side.accuracy));
    put("view_accuracy", (r.view.n > 0).then_some(r.view.accuracy));
    put("notes_macro_auc", r.notes.macro_auc);
    put("subject_sensitivity_ap", r.subject_sensitivity.ap);
    put("subject_sensitivity_fl", r.subject_sensitivity.fl);
    put("subject_sensitivity_both", r.subject_sensitivity.both);
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub per_repetition: Vec<f64>,
}

/// Mean and normal-approximation 95% interval of repetition-level values.
pub fn repetition_summary(values: &[f64]) -> MetricSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let half = 1.96 * sd / n.sqrt();
    MetricSummary { mean, sd, ci_lo: mean - half, ci_hi: mean + half, per_repetition: values.to_vec() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub repetition: usize,
    pub fold: usize,
    pub n_train_subjects: usize,
    pub n_val_subjects: usize,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub repetitions: usize,
    pub folds: usize,
    pub n_test_images: usize,
    pub ci_formula: String,
    pub fold_results: Vec<FoldSummary>,
    pub summary: BTreeMap<String, MetricSummary>,
}

pub fn fold_dir(out: &Path, rep: usize, fold: usize) -> PathBuf {
    out.join("cv").join(format!("rep{rep:02}")).join(format!("fold{fold:02}"))
}

pub const FOLD_REPORT_FILE: &str = "report.json";
pub const FOLD_LOGS_FILE: &str = "logs.json";

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(v)?).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Split the training images into fold-train and fold-validation by subject.
pub fn split_images(images: &[LoadedImage], val: &BTreeSet<String>) -> (Vec<LoadedImage>, Vec<LoadedImage>) {
    images.iter().cloned().partition(|li| !val.contains(&li.record.subject_id))
}

/// 9:1 subject-level split of a training set into fit and validation parts.
pub fn holdout_split(images: &[LoadedImage], seed: u64) -> Result<(Vec<LoadedImage>, Vec<LoadedImage>)> {
    let mut subjects: Vec<String> = images.iter().map(|li| li.record.subject_id.clone()).collect();
    subjects.sort();
    subjects.dedup();
    let plan = split_folds(&subjects, 10.min(subjects.len()), seed, 0)?;
    Ok(split_images(images, &plan.split(0).1))
}

/// Repeated k-fold cross-validation. Each fold trains a bundle on the other
/// folds, validates on its own subjects and is scored on the held-out test
/// split. A fold whose `report.json` exists is loaded instead of retrained.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let manifest = prepare_data(cfg)?;
    let train_m = manifest.split(SplitTag::Train);
    let test_m = manifest.split(SplitTag::Test);
    if test_m.records.is_empty() {
        return Err(Error::Config("manifest has no test split".into()));
    }
    let train_imgs = load_images(&train_m)?;
    let test_imgs = load_images(&test_m)?;
    let subjects = train_m.subjects();
    let mut fold_results = Vec::new();
    for rep in 0..cfg.cv.repetitions {
        let plan = split_folds(&subjects, cfg.cv.folds, cfg.seed, rep)?;
        for f in 0..cfg.cv.folds {
            let dir = fold_dir(&cfg.out_dir, rep, f);
            let report_path = dir.join(FOLD_REPORT_FILE);
            let (tr_subj, va_subj) = plan.split(f);
            let report: EvalReport = if report_path.exists() {
                log::info!("rep {rep} fold {f}: reusing {}", report_path.display());
                read_json(&report_path)?
            } else {
                log::info!("rep {rep} fold {f}: training on {} subjects", tr_subj.len());
                let (tr, va) = split_images(&train_imgs, &va_subj);
                let seed = cfg.seed.wrapping_add((rep * cfg.cv.folds + f) as u64);
                let bundle = train_bundle(cfg, &tr, &va, seed)?;
                let report = evaluate_bundle(&bundle.models, &test_imgs, Some(&cfg.bootstrap))?;
                bundle.models.save_dir(&dir)?;
                write_json(&dir.join(FOLD_LOGS_FILE), &bundle.logs)?;
                write_json(&report_path, &report)?;
                report
            };
            fold_results.push(FoldSummary {
                repetition: rep,
                fold: f,
                n_train_subjects: tr_subj.len(),
                n_val_subjects: va_subj.len(),
                metrics: key_metrics(&report),
            });
        }
    }
    let summary = summarize(&fold_results, cfg.cv.repetitions);
    let report = ExperimentReport {
        repetitions: cfg.cv.repetitions,
        folds: cfg.cv.folds,
        n_test_images: test_imgs.len(),
        ci_formula: CI_FORMULA.to_string(),
        fold_results,
        summary,
    };
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write_json(&cfg.out_dir.join("experiment.json"), &report)?;
    Ok(report)
}

/// Fold means per repetition, then [`repetition_summary`] across repetitions.
pub fn summarize(folds: &[FoldSummary], repetitions: usize) -> BTreeMap<String, MetricSummary> {
    let keys: BTreeSet<&String> = folds.iter().flat_map(|f| f.metrics.keys()).collect();
    let mut out = BTreeMap::new();
    for k in keys {
        let per_rep: Vec<f64> = (0..repetitions)
            .filter_map(|r| {
                let v: Vec<f64> =
                    folds.iter().filter(|f| f.repetition == r).filter_map(|f| f.metrics.get(k).copied()).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect();
        if !per_rep.is_empty() {
            out.insert(k.clone(), repetition_summary(&per_rep));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repetition_ci_formula() {
        let s = repetition_summary(&[0.8, 0.9, 1.0]);
        assert!((s.mean - 0.9).abs() < 1e-12);
        assert!((s.sd - 0.1).abs() < 1e-12);
        let half = 1.96 * 0.1 / 3f64.sqrt();
        assert!((s.ci_lo - (0.9 - half)).abs() < 1e-12 && (s.ci_hi - (0.9 + half)).abs() < 1e-12);
        let one = repetition_summary(&[0.7]);
        assert_eq!((one.ci_lo, one.ci_hi), (0.7, 0.7));
    }

    #[test]
    fn summary_averages_folds_within_repetition() {
        let fold = |r, v| FoldSummary {
            repetition: r,
            fold: 0,
            n_train_subjects: 1,
            n_val_subjects: 1,
            metrics: BTreeMap::from([("m".to_string(), v)]),
        };
        let s = summarize(&[fold(0, 0.5), fold(0, 0.7), fold(1, 0.8)], 2);
        assert_eq!(s["m"].per_repetition, vec![0.6, 0.8]);
    }

    #[test]
    fn head_matching_requires_overlap() {
        let g = [BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), BBox::new(20.0, 0.0, 30.0, 10.0).unwrap()];
        let p = [BBox::new(21.0, 0.0, 31.0, 10.0).unwrap(), BBox::new(50.0, 50.0, 60.0, 60.0).unwrap()];
        assert_eq!(match_heads(&p, &g), vec![None, Some(0)]);
    }

    #[test]
    fn task_seeds_differ() {
        let s: BTreeSet<u64> = [Task::Detector, Task::Side, Task::View, Task::Stage, Task::Notes]
            .iter()
            .map(|&t| task_seed(3, t))
            .collect();
        assert_eq!(s.len(), 5);
    }
}
