use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cam::CamMap;
use super::labels::{NoteClass, Stage};
use super::losses::{bce_from_logits, cross_entropy_from_logits, focal_from_logits, sigmoid, softmax, FocalConfig};
use super::resnet::{BackboneArch, ResNet18};
use crate::error::{Error, Result};
use crate::imaging::ImageF32;
use crate::nn::{read_checkpoint, write_checkpoint, GlobalAvgPool, Grads, Linear, ParamStore, Tensor};

pub const CLASSIFIER_KIND: &str = "classifier";
const BACKBONE: &str = "backbone";
/// Inference batch size; bounds peak memory.
const EVAL_CHUNK: usize = 64;

/// Which question a classifier answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Side,
    View,
    Stage,
    Notes,
}

impl HeadKind {
    pub const ALL: [HeadKind; 4] = [HeadKind::Side, HeadKind::View, HeadKind::Stage, HeadKind::Notes];

    pub fn n_outputs(self) -> usize {
        match self {
            HeadKind::Side | HeadKind::View => 2,
            HeadKind::Stage => Stage::COUNT,
            HeadKind::Notes => NoteClass::COUNT,
        }
    }

    /// Independent sigmoid outputs rather than a softmax distribution.
    pub fn is_multilabel(self) -> bool {
        self == HeadKind::Notes
    }

    pub fn tag(self) -> &'static str {
        match self {
            HeadKind::Side => "side",
            HeadKind::View => "view",
            HeadKind::Stage => "stage",
            HeadKind::Notes => "notes",
        }
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        HeadKind::ALL
            .into_iter()
            .find(|h| h.tag() == s)
            .ok_or_else(|| Error::invalid(format!("unknown classifier head '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierArch {
    pub head: HeadKind,
    pub backbone: BackboneArch,
}

/// Training target for one crop.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    MultiHot([f32; NoteClass::COUNT]),
}

#[derive(Debug, Clone)]
pub struct Classifier {
    arch: ClassifierArch,
    store: ParamStore,
    backbone: ResNet18,
    fc: Linear,
    /// Used by the stage head; other single-label heads use plain cross-entropy.
    pub focal: FocalConfig,
    seed: u64,
}

impl Classifier {
    pub fn new(arch: ClassifierArch, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let backbone = ResNet18::new(&mut store, BACKBONE, &arch.backbone, &mut rng)?;
        let fc = Linear::new(&mut store, "fc", arch.backbone.feature_channels(), arch.head.n_outputs(), &mut rng);
        Ok(Self { arch, store, backbone, fc, focal: FocalConfig::default(), seed })
    }

    pub fn arch(&self) -> &ClassifierArch {
        &self.arch
    }

    pub fn head(&self) -> HeadKind {
        self.arch.head
    }

    pub fn input_size(&self) -> usize {
        self.arch.backbone.input_size
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fc_weights(&self) -> &[f32] {
        self.store.get(self.fc.weight)
    }

    fn check_input(&self, crop: &ImageF32) -> Result<()> {
        let s = self.input_size();
        if crop.width() != s || crop.height() != s {
            return Err(Error::invalid(format!(
                "{} classifier expects {s}x{s} crops, got {}x{}",
                self.head().tag(),
                crop.width(),
                crop.height()
            )));
        }
        Ok(())
    }

    fn batch(&self, crops: &[&ImageF32]) -> Result<Tensor> {
        for c in crops {
            self.check_input(c)?;
        }
        Ok(Tensor::from_images(crops.iter().copied(), self.arch.backbone.in_channels))
    }

    fn activate(&self, logits: &[f64]) -> Vec<f64> {
        if self.head().is_multilabel() {
            logits.iter().map(|&z| sigmoid(z)).collect()
        } else {
            softmax(logits)
        }
    }

    fn logits_of(out: &Tensor) -> Vec<Vec<f64>> {
        (0..out.n).map(|b| (0..out.c).map(|o| out.data[o * out.n + b] as f64).collect()).collect()
    }

    /// Raw logits in inference mode.
    pub fn logits(&self, crops: &[&ImageF32]) -> Result<Vec<Vec<f64>>> {
        let mut all = Vec::with_capacity(crops.len());
        for chunk in crops.chunks(EVAL_CHUNK) {
            let x = self.batch(chunk)?;
            let f = self.backbone.forward_eval(&self.store, &x);
            let out = self.fc.forward(&self.store, &GlobalAvgPool.forward(&f));
            all.extend(Self::logits_of(&out));
        }
        Ok(all)
    }

    /// Probabilities: a distribution for single-label heads, independent
    /// per-class probabilities for the notes head.
    pub fn predict(&self, crops: &[&ImageF32]) -> Result<Vec<Vec<f64>>> {
        Ok(self.logits(crops)?.iter().map(|z| self.activate(z)).collect())
    }

    pub fn predict_head(&self, crop: &ImageF32) -> Result<Vec<f64>> {
        Ok(self.predict(&[crop])?.pop().expect("one prediction"))
    }

    /// Class activation map of `class_index` at the crop resolution.
    pub fn compute_cam(&self, crop: &ImageF32, class_index: usize) -> Result<CamMap> {
        if class_index >= self.head().n_outputs() {
            return Err(Error::invalid(format!("class {class_index} out of range for {} head", self.head().tag())));
        }
        let x = self.batch(&[crop])?;
        let f = self.backbone.forward_eval(&self.store, &x);
        let c = self.fc.cin;
        let w = &self.fc_weights()[class_index * c..(class_index + 1) * c];
        Ok(CamMap::from_features(&f, w, class_index, self.input_size()))
    }

    fn sample_loss(&self, logits: &[f64], target: &Target) -> Result<(f64, Vec<f64>)> {
        match (self.head(), target) {
            (HeadKind::Notes, Target::MultiHot(t)) => {
                let t: Vec<f64> = t.iter().map(|&v| v as f64).collect();
                Ok(bce_from_logits(logits, &t))
            }
            (HeadKind::Stage, Target::Class(y)) if *y < Stage::COUNT => Ok(focal_from_logits(logits, *y, &self.focal)),
            (HeadKind::Side | HeadKind::View, Target::Class(y)) if *y < 2 => Ok(cross_entropy_from_logits(logits, *y)),
            (h, t) => Err(Error::invalid(format!("target {t:?} does not fit the {} head", h.tag()))),
        }
    }

    /// Batch-mean loss in inference mode.
    pub fn eval_loss(&self, crops: &[&ImageF32], targets: &[Target]) -> Result<f64> {
        if crops.is_empty() {
            return Ok(0.0);
        }
        let logits = self.logits(crops)?;
        let mut total = 0.0;
        for (z, t) in logits.iter().zip(targets) {
            total += self.sample_loss(z, t)?.0;
        }
        Ok(total / crops.len() as f64)
    }

    /// Training-mode forward/backward on one batch; updates BN running stats.
    pub fn loss_and_grads(&mut self, crops: &[&ImageF32], targets: &[Target]) -> Result<(f64, Grads)> {
        if crops.len() != targets.len() {
            return Err(Error::invalid("one target per crop required"));
        }
        let mut grads = self.store.zero_grads();
        if crops.is_empty() {
            return Ok((0.0, grads));
        }
        let x = self.batch(crops)?;
        let (f, cache) = self.backbone.forward_train(&mut self.store, &x);
        let pooled = GlobalAvgPool.forward(&f);
        let out = self.fc.forward(&self.store, &pooled);
        let n = crops.len();
        let mut d_out = Tensor::zeros(out.c, n, 1, 1);
        let mut total = 0.0;
        for (b, (z, t)) in Self::logits_of(&out).iter().zip(targets).enumerate() {
            let (l, g) = self.sample_loss(z, t)?;
            total += l;
            for (o, gv) in g.iter().enumerate() {
                d_out.data[o * n + b] = (gv / n as f64) as f32;
            }
        }
        let d_pooled = self.fc.backward(&self.store, &pooled, &d_out, &mut grads);
        let d_f = GlobalAvgPool.backward(&d_pooled, f.h, f.w);
        self.backbone.backward(&self.store, &cache, &d_f, &mut grads);
        Ok((total / n as f64, grads))
    }

    /// Copies every backbone parameter from `source` and re-draws the final
    /// layer for this model's head.
    pub fn transfer_init(&mut self, source: &Classifier) -> Result<()> {
        let sig = |s: &ParamStore| -> String {
            s.params()
                .iter()
                .filter(|p| p.name.starts_with(BACKBONE))
                .map(|p| format!("{}:{:?}", p.name, p.shape))
                .collect::<Vec<_>>()
                .join(";")
        };
        if self.arch.backbone != source.arch.backbone || sig(&self.store) != sig(&source.store) {
            return Err(Error::ArchitectureMismatch(format!(
                "cannot transfer {} backbone into {} model",
                source.head().tag(),
                self.head().tag()
            )));
        }
        self.store.copy_prefix_from(&source.store, BACKBONE);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x7f4a_7c15);
        self.fc.reset(&mut self.store, &mut rng);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let arch = serde_json::to_value(&self.arch)?;
        let extra = serde_json::json!({ "focal": self.focal });
        write_checkpoint(path, CLASSIFIER_KIND, self.head().tag(), arch, self.seed, extra, &self.store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, store) = read_checkpoint(path)?;
        if header.kind != CLASSIFIER_KIND {
            return Err(Error::Checkpoint(format!("expected a classifier checkpoint, found '{}'", header.kind)));
        }
        let arch: ClassifierArch = serde_json::from_value(header.arch.clone())
            .map_err(|e| Error::Checkpoint(format!("classifier architecture: {e}")))?;
        if arch.head.tag() != header.tag {
            return Err(Error::Checkpoint(format!("tag '{}' disagrees with head '{}'", header.tag, arch.head.tag())));
        }
        let mut model = Classifier::new(arch, header.seed)?;
        if model.store.signature() != store.signature() {
            return Err(Error::ArchitectureMismatch("classifier parameters differ from architecture".into()));
        }
        model.store = store;
        if let Some(f) = header.extra.get("focal") {
            model.focal = serde_json::from_value(f.clone())?;
        }
        Ok(model)
    }

    /// Loads and checks that the checkpoint holds the expected head.
    pub fn load_head(path: &Path, head: HeadKind) -> Result<Self> {
        let m = Self::load(path)?;
        if m.head() != head {
            return Err(Error::Checkpoint(format!(
                "{} holds a {} head, expected {}",
                path.display(),
                m.head().tag(),
                head.tag()
            )));
        }
        Ok(m)
    }
}
