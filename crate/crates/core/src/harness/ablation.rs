use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Task};
use super::data::{head_crops, CropSet, CropSource, LoadedImage, RoiTemplate};
use super::experiment::{holdout_split, match_heads, repetition_summary, task_seed, train_classifier, CI_FORMULA};
use crate::classification::{Classifier, HeadKind, Stage};
use crate::detection::{BBox, Detector};
use crate::error::{Error, Result};
use crate::evaluation::{bootstrap_ci, macro_f1, BootstrapCi, BootstrapConfig};
use crate::roi::{inference_crop, ResampleConfig};

/// How test heads are cropped in one ablation cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiMode {
    /// Detected boxes at test time, ground-truth boxes resampled for training.
    Detection,
    /// Fixed per-view, per-side regions for training and testing.
    RawRoi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub label: String,
    pub mode: RoiMode,
    /// Resamples per head; typical heads get twice as many.
    pub n_samples: usize,
    pub is_default: bool,
    pub seeds: Vec<u64>,
    /// Staging macro-F1 on the test heads, one per seed.
    pub per_seed_f1: Vec<f64>,
    pub per_seed_ci: Vec<BootstrapCi>,
    pub median_f1: f64,
    pub mean_f1: f64,
    /// Across seeds with the repetition formula; with a single seed the
    /// bootstrap interval of that seed.
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub cells: Vec<AblationCell>,
    pub ci_formula: String,
    pub n_test_heads: usize,
}

impl AblationReport {
    pub fn cell(&self, mode: RoiMode, n: usize) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.mode == mode && c.n_samples == n)
    }
}

/// Default number of resamples per head.
pub const DEFAULT_N: usize = 5;

/// Test heads as `s = 1` crops of credited detections (`None` when missed).
fn detected_test_crops(
    detector: &Detector,
    test: &[LoadedImage],
    size: usize,
) -> Result<(Vec<Option<usize>>, CropSet, Vec<Stage>)> {
    let mut slot = Vec::new();
    let mut crops = CropSet::default();
    let mut truth = Vec::new();
    for chunk in test.chunks(8) {
        let imgs: Vec<_> = chunk.iter().map(|li| li.image.clone()).collect();
        for (li, dets) in chunk.iter().zip(detector.detect_batch(&imgs)?) {
            let boxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
            for (k, m) in match_heads(&boxes, &li.gt_boxes()).into_iter().enumerate() {
                truth.push(li.record.heads[k].stage);
                match m {
                    Some(i) => {
                        slot.push(Some(crops.len()));
                        crops.crops.push(inference_crop(&li.image, &boxes[i], size)?);
                        crops.labels.push(super::data::head_labels(&li.record, k));
                    }
                    None => slot.push(None),
                }
            }
        }
    }
    Ok((slot, crops, truth))
}

fn stage_predictions(model: &Classifier, crops: &CropSet) -> Result<Vec<usize>> {
    let probs = model.predict(&crops.crops.iter().collect::<Vec<_>>())?;
    Ok(probs.iter().map(|p| Stage::argmax_severe(p).index()).collect())
}

fn f1_with_ci(pred: &[usize], truth: &[usize], boot: &BootstrapConfig) -> Result<BootstrapCi> {
    let k = Stage::COUNT;
    bootstrap_ci(
        truth.len(),
        |idx| {
            let p: Vec<usize> = idx.iter().map(|&i| pred[i]).collect();
            let t: Vec<usize> = idx.iter().map(|&i| truth[i]).collect();
            macro_f1(&p, &t, k)
        },
        boot,
    )
}

/// Staging F1 with detection and `N` resamples for every configured `N`, plus
/// the raw-ROI baseline, each trained from scratch once per seed. All cells
/// share `detector` and are scored on the same test heads.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    train: &[LoadedImage],
    test: &[LoadedImage],
    detector: &Detector,
) -> Result<AblationReport> {
    cfg.validate()?;
    let ab = &cfg.ablation;
    if ab.seeds.is_empty() || (ab.n_values.is_empty() && !ab.raw_roi) {
        return Err(Error::Config("ablation needs at least one seed and one cell".into()));
    }
    let size = cfg.classifier.crop_size;
    let (slots, det_crops, truth) = detected_test_crops(detector, test, size)?;
    let truth_idx: Vec<usize> = truth.iter().map(|s| s.index()).collect();
    let template = RoiTemplate::fit(train)?;
    let roi_test = head_crops(test, CropSource::Template(&template), None, size)?;

    let mut specs: Vec<(RoiMode, usize)> = ab.n_values.iter().map(|&n| (RoiMode::Detection, n)).collect();
    if ab.raw_roi {
        specs.push((RoiMode::RawRoi, DEFAULT_N));
    }
    let mut cells = Vec::with_capacity(specs.len());
    for (mode, n) in specs {
        let resample = ResampleConfig { n_samples: n, typical_samples: 2 * n, ..cfg.resample };
        let mut per_seed_f1 = Vec::new();
        let mut per_seed_ci = Vec::new();
        for &seed in &ab.seeds {
            let (tr, va) = holdout_split(train, seed)?;
            let source = match mode {
                RoiMode::Detection => CropSource::Truth,
                RoiMode::RawRoi => CropSource::Template(&template),
            };
            let tr_crops = head_crops(&tr, source, Some(&resample), size)?;
            let va_crops = head_crops(&va, source, None, size)?;
            let tcfg = cfg.classifier.for_task(Task::Stage, task_seed(seed, Task::Stage));
            let (model, _) = train_classifier(HeadKind::Stage, &tcfg, &tr_crops, &va_crops, None)?;
            let pred: Vec<usize> = match mode {
                RoiMode::Detection => {
                    let p = stage_predictions(&model, &det_crops)?;
                    slots.iter().map(|s| s.map_or(Stage::Absence.index(), |i| p[i])).collect()
                }
                RoiMode::RawRoi => stage_predictions(&model, &roi_test)?,
            };
            let ci =
                f1_with_ci(&pred, &truth_idx, &BootstrapConfig { seed: cfg.bootstrap.seed ^ seed, ..cfg.bootstrap })?;
            log::info!("ablation {mode:?} N={n} seed {seed}: F1 {:.4}", ci.point);
            per_seed_f1.push(ci.point);
            per_seed_ci.push(ci);
        }
        let summary = repetition_summary(&per_seed_f1);
        let (ci_lo, ci_hi) =
            if per_seed_f1.len() > 1 { (summary.ci_lo, summary.ci_hi) } else { (per_seed_ci[0].lo, per_seed_ci[0].hi) };
        cells.push(AblationCell {
            label: match mode {
                RoiMode::Detection => format!("detection, N = {n}"),
                RoiMode::RawRoi => "raw ROI, no detection".to_string(),
            },
            mode,
            n_samples: n,
            is_default: mode == RoiMode::Detection && n == DEFAULT_N,
            seeds: ab.seeds.clone(),
            median_f1: median(&per_seed_f1),
            mean_f1: summary.mean,
            per_seed_f1,
            per_seed_ci,
            ci_lo,
            ci_hi,
        });
    }
    Ok(AblationReport { cells, ci_formula: CI_FORMULA.to_string(), n_test_heads: truth.len() })
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
