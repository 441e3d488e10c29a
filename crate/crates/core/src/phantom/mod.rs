//! Synthetic pelvic radiographs with stage-conditioned femoral-head lesions
//! and exact ground truth.

mod dataset;
mod probe;
mod render;
mod spec;

pub use dataset::{
    generate_dataset, plan_dataset, DatasetConfig, Manifest, ManifestRecord, PlannedImage, SplitTag, ViewMix,
    MANIFEST_SCHEMA_VERSION,
};
pub use probe::{probe_features, ProbeFeatures, PROBE_DIM};
pub use render::{
    effective_notes, generate_phantom, lesion_contrast, noise_sigma, HeadGeometry, PhantomSample, BOX_MARGIN,
    RADIUS_RANGE,
};
pub use spec::{check_notes, HeadSpec, HeadTruth, PhantomSpec, DEFAULT_IMAGE_SIZE, MIN_IMAGE_SIZE};
