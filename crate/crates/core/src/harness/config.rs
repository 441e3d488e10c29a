use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::BootstrapConfig;
use crate::phantom::{DatasetConfig, ViewMix};
use crate::pipeline::PipelineConfig;
use crate::roi::ResampleConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Detector,
    Side,
    View,
    Stage,
    Notes,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Detector => "detector",
            Task::Side => "side",
            Task::View => "view",
            Task::Stage => "stage",
            Task::Notes => "notes",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Task::Detector, Task::Side, Task::View, Task::Stage, Task::Notes]
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub rotation_deg: f64,
    /// Fraction of the crop side.
    pub translation: f64,
    pub flip_prob: f64,
    /// Toggle the side label when a crop is mirrored.
    pub swap_side_on_flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { rotation_deg: 10.0, translation: 0.05, flip_prob: 0.5, swap_side_on_flip: true }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self { rotation_deg: 0.0, translation: 0.0, flip_prob: 0.0, swap_side_on_flip: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotation_deg < 0.0 || self.translation < 0.0 || !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config("augmentation limits must be nonnegative, flip_prob in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Optimisation settings for one task. Adam with coupled L2 weight decay;
/// the learning rate halves after `patience` epochs without a validation-loss
/// improvement larger than `min_delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub task: Task,
    pub lr: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Classifier backbone width relative to the standard 18-layer network.
    pub width_mult: f64,
    /// Side of the square classifier crop.
    pub crop_size: usize,
    pub focal_gamma: f64,
    pub augment: AugmentConfig,
    /// Stop after this many epochs without improvement; 0 runs `max_epochs`.
    pub early_stop: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::Stage,
            lr: 1e-4,
            weight_decay: 5e-4,
            patience: 5,
            min_delta: 1e-4,
            max_epochs: 50,
            batch_size: 32,
            seed: 0,
            width_mult: 0.5,
            crop_size: 224,
            focal_gamma: 2.0,
            augment: AugmentConfig::default(),
            early_stop: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!("{}: rates, epochs and batch size must be positive", self.task.name())));
        }
        if self.patience == 0 || self.min_delta < 0.0 || !(self.width_mult > 0.0) || self.crop_size < 32 {
            return Err(Error::Config(format!("{}: invalid schedule or architecture", self.task.name())));
        }
        self.augment.validate()
    }

    pub fn for_task(&self, task: Task, seed: u64) -> TrainConfig {
        TrainConfig { task, seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub repetitions: usize,
    pub folds: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { repetitions: 3, folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Existing manifest to use instead of generating phantoms.
    pub manifest: Option<PathBuf>,
    pub n_subjects: usize,
    pub n_test_subjects: usize,
    pub stage_mix: [f64; 4],
    pub view_mix: ViewMix,
    pub noise: f64,
    pub image_size: usize,
    pub two_head_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            n_subjects: 200,
            n_test_subjects: 50,
            stage_mix: [0.25; 4],
            view_mix: ViewMix::default(),
            noise: 0.3,
            image_size: 768,
            two_head_fraction: 0.85,
        }
    }
}

impl DataConfig {
    pub fn dataset(&self, out_dir: &Path, seed: u64) -> DatasetConfig {
        DatasetConfig {
            n_subjects: self.n_subjects,
            n_test_subjects: self.n_test_subjects,
            stage_mix: self.stage_mix,
            view_mix: self.view_mix,
            out_dir: out_dir.to_path_buf(),
            seed,
            image_size: self.image_size,
            noise: self.noise,
            two_head_fraction: self.two_head_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    /// Resamples per detected head.
    pub n_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub raw_roi: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { n_values: vec![2, 3, 5, 10, 20], seeds: vec![0, 1, 2], raw_roi: true }
    }
}

/// Everything one experiment needs; serialised as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub cv: CvConfig,
    pub detector: TrainConfig,
    pub classifier: TrainConfig,
    /// Initialise the stage model from the trained view model, and the notes
    /// model from the trained stage model.
    pub transfer: bool,
    pub resample: ResampleConfig,
    pub pipeline: PipelineConfig,
    pub ablation: AblationConfig,
    pub bootstrap: BootstrapConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// Single-CPU defaults: reduced width and crop size, faster learning rates,
    /// three repetitions of five folds.
    pub fn desk() -> Self {
        let classifier = TrainConfig {
            task: Task::Stage,
            lr: 2e-3,
            max_epochs: 14,
            batch_size: 32,
            width_mult: 0.125,
            crop_size: 64,
            patience: 2,
            early_stop: 5,
            ..TrainConfig::default()
        };
        let detector = TrainConfig {
            task: Task::Detector,
            lr: 3e-3,
            max_epochs: 30,
            batch_size: 8,
            patience: 3,
            early_stop: 8,
            augment: AugmentConfig { rotation_deg: 0.0, translation: 0.0, flip_prob: 0.5, swap_side_on_flip: true },
            ..TrainConfig::default()
        };
        let resample = ResampleConfig { output_size: classifier.crop_size, ..ResampleConfig::default() };
        let pipeline = PipelineConfig { resample, ..PipelineConfig::default() };
        Self {
            seed: 7,
            out_dir: PathBuf::from("runs/desk"),
            data: DataConfig::default(),
            cv: CvConfig::default(),
            detector,
            classifier,
            transfer: true,
            resample,
            pipeline,
            ablation: AblationConfig::default(),
            bootstrap: BootstrapConfig { n_resamples: 2000, seed: 7, ..BootstrapConfig::default() },
        }
    }

    /// Full protocol: ten repetitions of ten folds, half-width network on
    /// 224-pixel crops, learning rate 1e-4.
    pub fn full() -> Self {
        let mut c = Self::desk();
        c.out_dir = PathBuf::from("runs/full");
        c.cv = CvConfig { repetitions: 10, folds: 10 };
        c.classifier = TrainConfig { task: Task::Stage, max_epochs: 100, early_stop: 0, ..TrainConfig::default() };
        c.detector = TrainConfig {
            task: Task::Detector,
            max_epochs: 100,
            batch_size: 8,
            augment: c.detector.augment,
            ..TrainConfig::default()
        };
        c.resample = ResampleConfig::default();
        c.pipeline.resample = c.resample;
        c.bootstrap.n_resamples = 10_000;
        c
    }

    /// Tiny end-to-end configuration for smoke runs.
    pub fn smoke() -> Self {
        let mut c = Self::desk();
        c.out_dir = PathBuf::from("runs/smoke");
        c.data = DataConfig { n_subjects: 40, n_test_subjects: 10, image_size: 384, ..DataConfig::default() };
        c.cv = CvConfig { repetitions: 1, folds: 2 };
        c.detector.max_epochs = 3;
        c.classifier.max_epochs = 2;
        c.classifier.width_mult = 0.0625;
        c.resample.n_samples = 2;
        c.resample.typical_samples = 4;
        c.pipeline.resample = c.resample;
        c.ablation = AblationConfig { n_values: vec![2], seeds: vec![0], raw_roi: true };
        c.bootstrap.n_resamples = 200;
        c
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            "smoke" => Ok(Self::smoke()),
            other => Err(Error::Config(format!("unknown profile '{other}' (desk, full, smoke)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.classifier.validate()?;
        self.resample.validate()?;
        if self.resample.output_size != self.classifier.crop_size {
            return Err(Error::Config(format!(
                "resample.output_size {} must equal classifier.crop_size {}",
                self.resample.output_size, self.classifier.crop_size
            )));
        }
        if self.cv.repetitions == 0 || self.cv.folds < 2 {
            return Err(Error::Config("cv needs >= 1 repetition and >= 2 folds".into()));
        }
        Ok(())
    }

    /// Parses `text` over the desk profile.
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_over(&Self::desk(), text)
    }

    /// Parses `text` over `base`: tables merge key by key, so a file that
    /// sets only `classifier.lr` keeps every other classifier value of `base`.
    pub fn from_toml_over(base: &Self, text: &str) -> Result<Self> {
        let cfg_err = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        let overlay: toml::Table = toml::from_str(text).map_err(|e| cfg_err(&e))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| cfg_err(&e))?;
        merge_tables(&mut merged, overlay);
        let c: Self = toml::Value::Table(merged).try_into().map_err(|e| cfg_err(&e))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_over(&Self::desk(), path)
    }

    pub fn load_over(base: &Self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_over(base, &text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Dataset directory: the configured manifest's parent or `out_dir/data`.
    pub fn data_dir(&self) -> PathBuf {
        match &self.data.manifest {
            Some(m) => m.parent().map(Path::to_path_buf).unwrap_or_default(),
            None => self.out_dir.join("data"),
        }
    }
}

fn merge_tables(into: &mut toml::Table, from: toml::Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => merge_tables(dst, src),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}
