use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classification::{BackboneArch, Classifier, ClassifierArch, HeadKind, DEFAULT_NOTE_TAU};
use crate::detection::{Detector, DetectorArch};
use crate::error::{Error, Result};
use crate::roi::ResampleConfig;

pub const DETECTOR_FILE: &str = "detector.ckpt";
pub const PIPELINE_FILE: &str = "pipeline.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Threshold on rectified note probabilities.
    pub note_tau: f64,
    /// Average stage probabilities over the multi-scale crops instead of
    /// using the single `s = 1` crop.
    pub multi_crop: bool,
    pub resample: ResampleConfig,
    /// Compute class activation maps for every record.
    pub cam: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { note_tau: DEFAULT_NOTE_TAU, multi_crop: false, resample: ResampleConfig::default(), cam: true }
    }
}

/// The five trained networks plus inference settings.
#[derive(Debug, Clone)]
pub struct Models {
    pub detector: Detector,
    pub side: Classifier,
    pub view: Classifier,
    pub stage: Classifier,
    pub notes: Classifier,
    pub config: PipelineConfig,
}

pub fn classifier_file(head: HeadKind) -> String {
    format!("{}.ckpt", head.tag())
}

impl Models {
    pub fn new(
        detector: Detector,
        side: Classifier,
        view: Classifier,
        stage: Classifier,
        notes: Classifier,
    ) -> Result<Self> {
        let m = Self { detector, side, view, stage, notes, config: PipelineConfig::default() };
        m.validate()?;
        Ok(m)
    }

    /// Randomly initialised networks, for wiring tests and demos.
    pub fn untrained(seed: u64, crop_size: usize, width_mult: f64) -> Result<Self> {
        let backbone = BackboneArch { width_mult, in_channels: 3, input_size: crop_size };
        let head = |h: HeadKind, k: u64| {
            Classifier::new(ClassifierArch { head: h, backbone: backbone.clone() }, seed.wrapping_add(k))
        };
        let mut m = Self::new(
            Detector::new(DetectorArch::default(), seed)?,
            head(HeadKind::Side, 1)?,
            head(HeadKind::View, 2)?,
            head(HeadKind::Stage, 3)?,
            head(HeadKind::Notes, 4)?,
        )?;
        m.config.resample.output_size = crop_size;
        Ok(m)
    }

    pub fn classifier(&self, head: HeadKind) -> &Classifier {
        match head {
            HeadKind::Side => &self.side,
            HeadKind::View => &self.view,
            HeadKind::Stage => &self.stage,
            HeadKind::Notes => &self.notes,
        }
    }

    /// Every classifier must hold its own head and share one crop size.
    pub fn validate(&self) -> Result<()> {
        let size = self.stage.input_size();
        for h in HeadKind::ALL {
            let c = self.classifier(h);
            if c.head() != h {
                return Err(Error::Checkpoint(format!("{} slot holds a {} classifier", h.tag(), c.head().tag())));
            }
            if c.input_size() != size {
                return Err(Error::invalid("classifiers disagree on crop size"));
            }
        }
        Ok(())
    }

    pub fn crop_size(&self) -> usize {
        self.stage.input_size()
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.detector.save(&dir.join(DETECTOR_FILE))?;
        for h in HeadKind::ALL {
            self.classifier(h).save(&dir.join(classifier_file(h)))?;
        }
        let p = dir.join(PIPELINE_FILE);
        std::fs::write(&p, serde_json::to_vec_pretty(&self.config)?).map_err(|e| Error::io(&p, e))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let path = |f: &str| -> PathBuf { dir.join(f) };
        let detector = Detector::load(&path(DETECTOR_FILE))?;
        let load = |h: HeadKind| Classifier::load_head(&path(&classifier_file(h)), h);
        let mut m = Self::new(
            detector,
            load(HeadKind::Side)?,
            load(HeadKind::View)?,
            load(HeadKind::Stage)?,
            load(HeadKind::Notes)?,
        )?;
        let p = path(PIPELINE_FILE);
        if p.exists() {
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            m.config = serde_json::from_slice(&bytes)?;
        }
        Ok(m)
    }
}
