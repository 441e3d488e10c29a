//! Training and experiment driver: fold plans, augmentation, the optimisation
//! loop, repeated cross-validation, the resampling ablation and report files.

mod ablation;
mod augment;
mod config;
mod data;
mod experiment;
mod folds;
mod outputs;
mod trainer;

pub use ablation::{median, run_ablation, AblationCell, AblationReport, RoiMode, DEFAULT_N};
pub use augment::{augment, warp, HeadLabels};
pub use config::{AblationConfig, AugmentConfig, CvConfig, DataConfig, ExperimentConfig, Task, TrainConfig};
pub use data::{
    head_crops, head_labels, load_images, target_for, ClassifierTask, CropSet, CropSource, DetectorTask, LoadedImage,
    RoiTemplate,
};
pub use experiment::{
    detection_report, evaluate_bundle, evaluate_predictions, fold_dir, holdout_split, key_metrics, match_heads,
    new_classifier, predict_images, prepare_data, repetition_summary, run_experiment, split_images, summarize,
    task_seed, train_bundle, train_classifier, train_detector, DetectionReport, DetectionRow, EvalReport,
    ExperimentReport, FoldSummary, ImagePrediction, MetricSummary, SubjectSensitivity, TrainedBundle, CI_FORMULA,
    FOLD_LOGS_FILE, FOLD_REPORT_FILE, HEAD_MATCH_IOU,
};
pub use folds::{split_folds, FoldPlan};
pub use outputs::{roc_csv, stage_roc_curves, write_overlays};
pub use trainer::{fit, EpochLog, TrainLog, Trainable};
