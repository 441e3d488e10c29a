//! SSD-style femoral-head detector: boxes, anchors, matching, multi-box loss,
//! non-maximum suppression and the network itself.

mod anchors;
mod boxes;
mod loss;
mod matching;
mod model;
mod nms;

pub use anchors::{decode, encode, AnchorConfig, AnchorSet, VARIANCES};
pub use boxes::{iou, BBox};
pub use loss::{
    confidence_grad_with, confidence_loss, confidence_loss_with, hard_negatives, localization_grad, localization_loss,
    multibox_loss, multibox_terms, sigmoid, smooth_l1, smooth_l1_grad, DetectLossConfig, MultiboxTerms, PROB_EPS,
};
pub use matching::{encode_targets, match_anchors, MatchMatrix};
pub use model::{Detector, DetectorArch, DetectorSample, InferenceConfig, DETECTOR_KIND, MIN_INPUT_SIDE};
pub use nms::{nms, Detection};
