use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{augment, HeadLabels};
use super::config::AugmentConfig;
use super::trainer::Trainable;
use crate::classification::{Classifier, HeadKind, NoteClass, Side, Target, View};
use crate::detection::{BBox, Detector, DetectorSample};
use crate::error::{Error, Result};
use crate::imaging::ImageF32;
use crate::nn::{Grads, ParamStore};
use crate::phantom::{Manifest, ManifestRecord};
use crate::roi::{crop_at_scale, resample_fh, ResampleConfig};

/// A manifest record with its decoded image.
#[derive(Debug, Clone)]
pub struct LoadedImage {
    pub record: ManifestRecord,
    pub image: ImageF32,
}

impl LoadedImage {
    /// `{subject}_{view}` style identifier derived from the file name.
    pub fn id(&self) -> String {
        std::path::Path::new(&self.record.image_path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.record.image_path.clone())
    }

    pub fn gt_boxes(&self) -> Vec<BBox> {
        self.record.heads.iter().map(|h| h.bbox).collect()
    }
}

/// Decodes every image of the manifest, in manifest order.
pub fn load_images(manifest: &Manifest) -> Result<Vec<LoadedImage>> {
    manifest.records.par_iter().map(|r| Ok(LoadedImage { record: r.clone(), image: manifest.load_image(r)? })).collect()
}

pub fn head_labels(record: &ManifestRecord, head: usize) -> HeadLabels {
    let h = &record.heads[head];
    HeadLabels { side: h.side, view: record.view, stage: h.stage, notes: h.notes.clone() }
}

pub fn target_for(head: HeadKind, l: &HeadLabels) -> Target {
    match head {
        HeadKind::Side => Target::Class(l.side.index()),
        HeadKind::View => Target::Class(l.view.index()),
        HeadKind::Stage => Target::Class(l.stage.index()),
        HeadKind::Notes => Target::MultiHot(NoteClass::multi_hot(&l.notes)),
    }
}

/// Labelled head crops.
#[derive(Debug, Clone, Default)]
pub struct CropSet {
    pub crops: Vec<ImageF32>,
    pub labels: Vec<HeadLabels>,
}

impl CropSet {
    pub fn len(&self) -> usize {
        self.crops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.crops.is_empty()
    }

    pub fn targets(&self, head: HeadKind) -> Vec<Target> {
        self.labels.iter().map(|l| target_for(head, l)).collect()
    }

    fn extend(&mut self, other: CropSet) {
        self.crops.extend(other.crops);
        self.labels.extend(other.labels);
    }
}

/// Where each head is cropped from.
#[derive(Debug, Clone, Copy)]
pub enum CropSource<'a> {
    /// Ground-truth boxes.
    Truth,
    /// The fixed per-view, per-side region of a [`RoiTemplate`].
    Template(&'a RoiTemplate),
}

/// Crops every head at each scale of `resample` (or only `s = 1` when `None`).
pub fn head_crops(
    images: &[LoadedImage],
    source: CropSource,
    resample: Option<&ResampleConfig>,
    size: usize,
) -> Result<CropSet> {
    let parts: Vec<CropSet> = images
        .par_iter()
        .map(|li| {
            let mut set = CropSet::default();
            for (k, h) in li.record.heads.iter().enumerate() {
                let bbox = match source {
                    CropSource::Truth => h.bbox,
                    CropSource::Template(t) => t.region(li.record.view, h.side)?,
                };
                let crops = match resample {
                    Some(cfg) => {
                        let cfg = ResampleConfig { output_size: size, ..*cfg };
                        resample_fh(&li.image, &bbox, &cfg, li.record.typical)?.into_iter().map(|c| c.image).collect()
                    }
                    None => vec![crop_at_scale(&li.image, &bbox, 1.0, size)?.image],
                };
                let labels = head_labels(&li.record, k);
                set.labels.extend(std::iter::repeat_n(labels, crops.len()));
                set.crops.extend(crops);
            }
            Ok(set)
        })
        .collect::<Result<_>>()?;
    let mut out = CropSet::default();
    for p in parts {
        out.extend(p);
    }
    Ok(out)
}

/// Predefined raw regions of interest used when no detector is available:
/// for each view and side, the union of all training ground-truth boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiTemplate {
    pub regions: BTreeMap<String, BBox>,
}

impl RoiTemplate {
    fn key(view: View, side: Side) -> String {
        format!("{view:?}/{side:?}")
    }

    pub fn fit(images: &[LoadedImage]) -> Result<Self> {
        let mut regions: BTreeMap<String, BBox> = BTreeMap::new();
        for li in images {
            for h in &li.record.heads {
                let b = h.bbox;
                regions
                    .entry(Self::key(li.record.view, h.side))
                    .and_modify(|u| {
                        *u = BBox {
                            x_min: u.x_min.min(b.x_min),
                            y_min: u.y_min.min(b.y_min),
                            x_max: u.x_max.max(b.x_max),
                            y_max: u.y_max.max(b.y_max),
                        };
                    })
                    .or_insert(b);
            }
        }
        if regions.is_empty() {
            return Err(Error::invalid("no training heads to build raw ROIs from"));
        }
        Ok(Self { regions })
    }

    pub fn region(&self, view: View, side: Side) -> Result<BBox> {
        self.regions
            .get(&Self::key(view, side))
            .copied()
            .ok_or_else(|| Error::invalid(format!("no raw ROI for {view:?}/{side:?}")))
    }
}

/// Validation loss is averaged in chunks to bound memory.
const EVAL_CHUNK: usize = 64;

/// A classifier head bound to its crops.
pub struct ClassifierTask<'a> {
    pub model: Classifier,
    pub train: &'a CropSet,
    pub val_crops: Vec<&'a ImageF32>,
    pub val_targets: Vec<Target>,
    pub augment: AugmentConfig,
}

impl<'a> ClassifierTask<'a> {
    pub fn new(model: Classifier, train: &'a CropSet, val: &'a CropSet, augment: AugmentConfig) -> Self {
        let head = model.head();
        // a mirrored view is still the same view, but flipping without a side
        // swap would corrupt side labels
        let augment =
            if head == HeadKind::Side { AugmentConfig { swap_side_on_flip: true, ..augment } } else { augment };
        Self { val_crops: val.crops.iter().collect(), val_targets: val.targets(head), model, train, augment }
    }
}

impl Trainable for ClassifierTask<'_> {
    fn store(&self) -> &ParamStore {
        self.model.store()
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        self.model.store_mut()
    }

    fn n_train(&self) -> usize {
        self.train.len()
    }

    fn batch_grads(&mut self, indices: &[usize], rng: &mut ChaCha8Rng) -> Result<(f64, Grads)> {
        let head = self.model.head();
        let mut crops = Vec::with_capacity(indices.len());
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            let (c, l) = augment(&self.train.crops[i], &self.train.labels[i], &self.augment, rng);
            crops.push(c);
            targets.push(target_for(head, &l));
        }
        self.model.loss_and_grads(&crops.iter().collect::<Vec<_>>(), &targets)
    }

    fn validation_loss(&self) -> Result<f64> {
        if self.val_crops.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for (c, t) in self.val_crops.chunks(EVAL_CHUNK).zip(self.val_targets.chunks(EVAL_CHUNK)) {
            total += self.model.eval_loss(c, t)? * c.len() as f64;
        }
        Ok(total / self.val_crops.len() as f64)
    }
}

/// The detector bound to resized radiographs.
pub struct DetectorTask {
    pub model: Detector,
    pub train: Vec<DetectorSample>,
    pub val: Vec<DetectorSample>,
    pub flip_prob: f64,
}

impl DetectorTask {
    pub fn new(model: Detector, train: &[LoadedImage], val: &[LoadedImage], flip_prob: f64) -> Result<Self> {
        let prep = |set: &[LoadedImage]| -> Result<Vec<DetectorSample>> {
            set.par_iter().map(|li| model.prepare(&li.image, &li.gt_boxes())).collect()
        };
        let (train, val) = (prep(train)?, prep(val)?);
        Ok(Self { model, train, val, flip_prob })
    }
}

impl Trainable for DetectorTask {
    fn store(&self) -> &ParamStore {
        self.model.store()
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        self.model.store_mut()
    }

    fn n_train(&self) -> usize {
        self.train.len()
    }

    fn batch_grads(&mut self, indices: &[usize], rng: &mut ChaCha8Rng) -> Result<(f64, Grads)> {
        let batch: Vec<DetectorSample> = indices
            .iter()
            .map(|&i| {
                let s = &self.train[i];
                if rng.random::<f64>() < self.flip_prob {
                    let w = s.input.width() as f64;
                    DetectorSample {
                        input: s.input.flip_horizontal(),
                        boxes: s.boxes.iter().map(|b| b.mirror(w)).collect(),
                    }
                } else {
                    s.clone()
                }
            })
            .collect();
        Ok(self.model.loss_and_grads(&batch))
    }

    fn validation_loss(&self) -> Result<f64> {
        if self.val.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for c in self.val.chunks(16) {
            total += self.model.eval_loss(c) * c.len() as f64;
        }
        Ok(total / self.val.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classification::Stage;
    use crate::phantom::{HeadTruth, SplitTag};

    fn loaded(view: View, boxes: &[(Side, BBox)], typical: bool) -> LoadedImage {
        let heads = boxes
            .iter()
            .map(|&(side, bbox)| HeadTruth { bbox, stage: Stage::II, notes: vec![NoteClass::ScleroticChange], side })
            .collect();
        LoadedImage {
            record: ManifestRecord {
                image_path: "images/S0001_AP.png".into(),
                split_tag: SplitTag::Train,
                view,
                subject_id: "S0001".into(),
                typical,
                heads,
            },
            image: ImageF32::filled(128, 128, 0.5),
        }
    }

    #[test]
    fn crop_counts_follow_resampling_rule() {
        let a = BBox::new(10.0, 10.0, 50.0, 50.0).unwrap();
        let b = BBox::new(70.0, 10.0, 110.0, 50.0).unwrap();
        let imgs = vec![
            loaded(View::AP, &[(Side::Right, a), (Side::Left, b)], false),
            loaded(View::FL, &[(Side::Right, a)], true),
        ];
        let cfg = ResampleConfig::default();
        let set = head_crops(&imgs, CropSource::Truth, Some(&cfg), 32).unwrap();
        assert_eq!(set.len(), 5 + 5 + 10);
        assert!(set.crops.iter().all(|c| c.width() == 32 && c.height() == 32));
        assert_eq!(head_crops(&imgs, CropSource::Truth, None, 32).unwrap().len(), 3);
    }

    #[test]
    fn template_is_union_per_view_and_side() {
        let imgs = vec![
            loaded(View::AP, &[(Side::Right, BBox::new(10.0, 10.0, 40.0, 40.0).unwrap())], false),
            loaded(View::AP, &[(Side::Right, BBox::new(20.0, 5.0, 50.0, 35.0).unwrap())], false),
        ];
        let t = RoiTemplate::fit(&imgs).unwrap();
        assert_eq!(t.region(View::AP, Side::Right).unwrap(), BBox::new(10.0, 5.0, 50.0, 40.0).unwrap());
        assert!(t.region(View::FL, Side::Right).is_err());
    }
}
