//! Detection, classification and reader-agreement statistics.

mod agreement;
mod bootstrap;
mod classify;
mod detection;
mod roc;
mod uncertainty;

pub use agreement::{cohens_kappa, KappaResult};
pub use bootstrap::{
    bootstrap_ci, bootstrap_compare, bootstrap_replicates, quantile_sorted, resample_indices, BootstrapCi,
    BootstrapConfig, CiMethod, PairedComparison,
};
pub use classify::{
    accuracy, binary_report, confusion_matrix, macro_f1, notes_report, one_vs_rest_auc, per_class_f1, staging_report,
    subject_presence_sensitivity, BinaryReport, NotesReport, StageClassReport, StagingReport, ViewCall,
};
pub use detection::{
    auto_iou_threshold, default_iou_grid, detection_prf, f1_score, greedy_pairs, match_image, select_iou_threshold,
    IouRule, MatchCounts, Prf,
};
pub use roc::{auc_mann_whitney, operating_point, roc_auc, OperatingPoint, RocCurve, RocPoint};
pub use uncertainty::{decile, uncertainty_histogram, UncertaintyHistogram, N_DECILES};
