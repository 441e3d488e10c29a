//! JSON form of pipeline output, as served to clients.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::diagnose::{FhRecord, RadiographDiagnosis, SubjectDiagnosis};
use crate::classification::{NoteClass, Side, Stage, View};
use crate::detection::BBox;
use crate::error::Result;

/// One femoral head; the CAM travels as a base64-encoded grayscale PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadPayload {
    pub id: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
    pub side: Side,
    pub side_probs: [f64; 2],
    pub view: View,
    pub view_probs: [f64; 2],
    pub stage: Stage,
    pub stage_probs: [f64; Stage::COUNT],
    pub note_probs: [f64; NoteClass::COUNT],
    pub rectified_note_probs: [f64; NoteClass::COUNT],
    pub notes: Vec<NoteClass>,
    pub notes_low_confidence: bool,
    pub caption: String,
    pub cam: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiographPayload {
    pub image_id: String,
    pub heads: Vec<HeadPayload>,
    pub advisory: Option<String>,
}

impl RadiographPayload {
    /// Most severe predicted stage, Absence when nothing was detected.
    pub fn image_stage(&self) -> Stage {
        self.heads.iter().map(|h| h.stage).max().unwrap_or(Stage::Absence)
    }
}

/// Response of the diagnose endpoint: one entry per uploaded radiograph and,
/// when a subject tag was supplied, the subject-level aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosePayload {
    pub results: Vec<RadiographPayload>,
    pub subject: Option<SubjectDiagnosis>,
}

pub fn head_payload(r: &FhRecord) -> Result<HeadPayload> {
    let cam = match &r.cam {
        Some(c) => Some(STANDARD.encode(c.encode_png()?)),
        None => None,
    };
    Ok(HeadPayload {
        id: r.id.clone(),
        bbox: r.bbox,
        score: r.score,
        side: r.side,
        side_probs: r.side_probs,
        view: r.view,
        view_probs: r.view_probs,
        stage: r.stage,
        stage_probs: r.stage_probs,
        note_probs: r.note_probs,
        rectified_note_probs: r.rectified_note_probs,
        notes: r.notes.clone(),
        notes_low_confidence: r.notes_low_confidence,
        caption: r.caption.clone(),
        cam,
    })
}

pub fn radiograph_payload(d: &RadiographDiagnosis) -> Result<RadiographPayload> {
    Ok(RadiographPayload {
        image_id: d.image_id.clone(),
        heads: d.records.iter().map(head_payload).collect::<Result<_>>()?,
        advisory: d.advisory.clone(),
    })
}
