//! On-disk artefacts of an evaluation: ROC curves as CSV and annotated overlays.

use std::path::Path;

use super::data::LoadedImage;
use super::experiment::ImagePrediction;
use crate::classification::Stage;
use crate::error::{Error, Result};
use crate::evaluation::{roc_auc, RocCurve};
use crate::pipeline::{diagnose_radiograph, render_report, Models};

/// One-vs-rest ROC per stage over every ground-truth head. Missed heads score
/// as a certain Absence call. Stages without both classes are skipped.
pub fn stage_roc_curves(images: &[LoadedImage], preds: &[ImagePrediction]) -> Vec<(Stage, RocCurve)> {
    let mut probs = Vec::new();
    let mut truth = Vec::new();
    for (li, p) in images.iter().zip(preds) {
        for (k, m) in p.head_match.iter().enumerate() {
            truth.push(li.record.heads[k].stage);
            probs.push(match m {
                Some(i) => p.records[*i].stage_probs,
                None => std::array::from_fn(|c| if c == Stage::Absence.index() { 1.0 } else { 0.0 }),
            });
        }
    }
    Stage::ALL
        .into_iter()
        .filter_map(|s| {
            let scores: Vec<f64> = probs.iter().map(|p| p[s.index()]).collect();
            let labels: Vec<bool> = truth.iter().map(|t| *t == s).collect();
            roc_auc(&scores, &labels).ok().map(|c| (s, c))
        })
        .collect()
}

/// Long format: `stage,threshold,fpr,tpr`; an empty threshold calls nothing positive.
pub fn roc_csv(curves: &[(Stage, RocCurve)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::invalid(format!("writing ROC csv: {e}"));
    w.write_record(["stage", "threshold", "fpr", "tpr"]).map_err(csv_err)?;
    for (stage, c) in curves {
        for p in &c.points {
            let t = p.threshold.map(|t| t.to_string()).unwrap_or_default();
            w.write_record([stage.label().to_string(), t, p.fpr.to_string(), p.tpr.to_string()]).map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("writing ROC csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("ascii csv"))
}

/// Writes `{id}.png` and `{id}.txt` for each image, with CAMs enabled.
pub fn write_overlays(models: &Models, images: &[LoadedImage], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut m = models.clone();
    m.config.cam = true;
    for li in images {
        let id = li.id();
        let d = diagnose_radiograph(&li.image, &id, &m)?;
        let (png, mut text) = render_report(&li.image, &d.records)?;
        if let Some(a) = &d.advisory {
            text.push_str(&format!("advisory: {a}\n"));
        }
        for (name, bytes) in [(format!("{id}.png"), png), (format!("{id}.txt"), text.into_bytes())] {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(())
}
