//! Femoral-head detection and AVNFH staging on pelvic radiographs.
//!
//! The crate bundles a small deterministic CNN engine ([`nn`]), a synthetic
//! radiograph generator ([`phantom`]), an SSD-style femoral-head detector
//! ([`detection`]), crop resampling ([`roi`]), ResNet classifiers for side,
//! view, stage and notes ([`classification`]), end-to-end orchestration
//! ([`pipeline`]), evaluation statistics ([`evaluation`]) and the training
//! and experiment driver ([`harness`]).

pub mod classification;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod imaging;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod roi;

pub use classification::labels::{CollapseGroup, NoteClass, Side, Stage, View};
pub use error::{Error, Result};
pub use imaging::ImageF32;
