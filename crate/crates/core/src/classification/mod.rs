//! Side, view, stage and note classifiers over femoral-head crops.

mod cam;
pub mod labels;
mod losses;
mod model;
mod notes;
mod resnet;

pub use cam::{normalize_unit, weighted_feature_sum, CamMap};
pub use labels::{CollapseGroup, NoteClass, Side, Stage, View};
pub use losses::{
    bce_from_logits, bce_loss, cross_entropy_from_logits, cross_entropy_loss, focal_from_logits, focal_loss,
    focal_term, sigmoid, softmax, FocalConfig, PROB_EPS,
};
pub use model::{Classifier, ClassifierArch, HeadKind, Target, CLASSIFIER_KIND};
pub use notes::{caption, emit_notes, notes_text, rectify_note_probs, NoteEmission, DEFAULT_NOTE_TAU};
pub use resnet::{BackboneArch, ResNet18, ResNetCache};
