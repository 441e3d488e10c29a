//! End-to-end radiograph diagnosis: detection, classification, explanation,
//! subject aggregation and rendering.

mod diagnose;
mod models;
mod payload;
mod render;

pub use diagnose::{
    aggregate_subject, diagnose_boxes, diagnose_radiograph, FhRecord, RadiographDiagnosis, SubjectDiagnosis,
    NO_FH_ADVISORY,
};
pub use models::{classifier_file, Models, PipelineConfig, DETECTOR_FILE, PIPELINE_FILE};
pub use payload::{head_payload, radiograph_payload, DiagnosePayload, HeadPayload, RadiographPayload};
pub use render::{
    box_label, jet, render_overlay, render_overlay_png, render_report, render_subject_text, render_text, CAM_ALPHA,
};
