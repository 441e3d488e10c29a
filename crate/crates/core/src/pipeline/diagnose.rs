use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::models::Models;
use crate::classification::{caption, emit_notes, rectify_note_probs, CamMap, NoteClass, Side, Stage, View};
use crate::detection::BBox;
use crate::error::{Error, Result};
use crate::imaging::ImageF32;
use crate::roi::{crop_at_scale, inference_crop};

pub const NO_FH_ADVISORY: &str = "no FH detected";

/// One detected femoral head with every downstream prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FhRecord {
    /// `{image_id}#{k}`, `k` in detection order.
    pub id: String,
    pub image_id: String,
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
    /// Explains the predicted stage.
    pub cam: Option<CamMap>,
}

impl FhRecord {
    /// Structural invariants: severity-tie-broken argmax and note ownership.
    pub fn check(&self) -> Result<()> {
        if Stage::argmax_severe(&self.stage_probs) != self.stage {
            return Err(Error::invalid(format!("record {} stage is not the argmax", self.id)));
        }
        if let Some(n) = self.notes.iter().find(|n| n.owning_stage() != self.stage) {
            return Err(Error::invalid(format!("record {} carries {n:?} under stage {}", self.id, self.stage)));
        }
        let s: f64 = self.stage_probs.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("record {} stage probabilities sum to {s}", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiographDiagnosis {
    pub image_id: String,
    pub records: Vec<FhRecord>,
    pub advisory: Option<String>,
}

fn pair(v: &[f64]) -> [f64; 2] {
    [v[0], v[1]]
}

/// Detect, crop at `s = 1`, classify, rectify notes and explain each head.
pub fn diagnose_radiograph(image: &ImageF32, image_id: &str, models: &Models) -> Result<RadiographDiagnosis> {
    let dets = models.detector.detect_fh(image)?;
    diagnose_boxes(image, image_id, models, &dets.iter().map(|d| (d.bbox, d.score)).collect::<Vec<_>>())
}

/// Runs the classification stages on externally supplied boxes.
pub fn diagnose_boxes(
    image: &ImageF32,
    image_id: &str,
    models: &Models,
    boxes: &[(BBox, f64)],
) -> Result<RadiographDiagnosis> {
    if boxes.is_empty() {
        return Ok(RadiographDiagnosis {
            image_id: image_id.to_string(),
            records: Vec::new(),
            advisory: Some(NO_FH_ADVISORY.to_string()),
        });
    }
    let size = models.crop_size();
    let crops: Vec<ImageF32> = boxes.iter().map(|(b, _)| inference_crop(image, b, size)).collect::<Result<_>>()?;
    let refs: Vec<&ImageF32> = crops.iter().collect();
    let side = models.side.predict(&refs)?;
    let view = models.view.predict(&refs)?;
    let notes = models.notes.predict(&refs)?;
    let stage =
        if models.config.multi_crop { multi_crop_stage(image, boxes, models)? } else { models.stage.predict(&refs)? };
    let mut records = Vec::with_capacity(boxes.len());
    for (k, ((b, score), crop)) in boxes.iter().zip(&crops).enumerate() {
        let stage_probs: [f64; Stage::COUNT] = std::array::from_fn(|i| stage[k][i]);
        let note_probs: [f64; NoteClass::COUNT] = std::array::from_fn(|i| notes[k][i]);
        let st = Stage::argmax_severe(&stage_probs);
        let rectified = rectify_note_probs(&note_probs, &stage_probs);
        let emission = emit_notes(&rectified, st, models.config.note_tau);
        let cam = if models.config.cam { Some(models.stage.compute_cam(crop, st.index())?) } else { None };
        let side_probs = pair(&side[k]);
        let view_probs = pair(&view[k]);
        records.push(FhRecord {
            id: format!("{image_id}#{k}"),
            image_id: image_id.to_string(),
            bbox: *b,
            score: *score,
            side: if side_probs[1] > side_probs[0] { Side::ALL[1] } else { Side::ALL[0] },
            side_probs,
            view: if view_probs[1] > view_probs[0] { View::ALL[1] } else { View::ALL[0] },
            view_probs,
            stage: st,
            stage_probs,
            note_probs,
            rectified_note_probs: rectified,
            caption: caption(st, &emission),
            notes: emission.notes,
            notes_low_confidence: emission.low_confidence,
            cam,
        });
    }
    Ok(RadiographDiagnosis { image_id: image_id.to_string(), records, advisory: None })
}

fn multi_crop_stage(image: &ImageF32, boxes: &[(BBox, f64)], models: &Models) -> Result<Vec<Vec<f64>>> {
    let cfg = &models.config.resample;
    let size = models.crop_size();
    let mut out = Vec::with_capacity(boxes.len());
    for (b, _) in boxes {
        let crops: Vec<ImageF32> = cfg
            .scales(false)
            .into_iter()
            .map(|s| Ok(crop_at_scale(image, b, s, size)?.image))
            .collect::<Result<_>>()?;
        let probs = models.stage.predict(&crops.iter().collect::<Vec<_>>())?;
        let mut mean = vec![0.0; Stage::COUNT];
        for p in &probs {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v / probs.len() as f64;
            }
        }
        out.push(mean);
    }
    Ok(out)
}

/// Subject-level call: the most severe stage over every record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectDiagnosis {
    pub subject_id: String,
    /// Record ids grouped by the view of their radiograph.
    pub per_view: BTreeMap<View, Vec<String>>,
    pub final_stage: Stage,
    /// Records attaining `final_stage`.
    pub evidence: Vec<String>,
    /// Most severe stage per predicted side.
    pub per_side: BTreeMap<Side, Stage>,
}

/// Records are `(radiograph view, record)`; the view is the exam's, not the
/// per-head prediction, when known.
pub fn aggregate_subject(subject_id: &str, records: &[(View, &FhRecord)]) -> Result<SubjectDiagnosis> {
    let final_stage = records
        .iter()
        .map(|(_, r)| r.stage)
        .max()
        .ok_or_else(|| Error::invalid(format!("subject {subject_id} has no records to aggregate")))?;
    let mut per_view: BTreeMap<View, Vec<String>> = BTreeMap::new();
    let mut per_side: BTreeMap<Side, Stage> = BTreeMap::new();
    for (v, r) in records {
        per_view.entry(*v).or_default().push(r.id.clone());
        let e = per_side.entry(r.side).or_insert(Stage::Absence);
        *e = (*e).max(r.stage);
    }
    for ids in per_view.values_mut() {
        ids.sort();
    }
    let mut evidence: Vec<String> =
        records.iter().filter(|(_, r)| r.stage == final_stage).map(|(_, r)| r.id.clone()).collect();
    evidence.sort();
    Ok(SubjectDiagnosis { subject_id: subject_id.to_string(), per_view, final_stage, evidence, per_side })
}
