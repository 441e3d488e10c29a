use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::anchors::{decode, AnchorConfig, AnchorSet};
use super::boxes::BBox;
use super::loss::{multibox_terms, sigmoid, DetectLossConfig};
use super::matching::{encode_targets, match_anchors};
use super::nms::{nms, Detection};
use crate::error::{Error, Result};
use crate::imaging::ImageF32;
use crate::nn::{read_checkpoint, write_checkpoint, Conv2d, ConvBn, ConvBnCache, Grads, ParamStore, Tensor};

pub const DETECTOR_KIND: &str = "detector";
/// Smallest accepted input side before resizing.
pub const MIN_INPUT_SIDE: usize = 32;

/// Backbone of stride-2 3x3 conv/BN/ReLU layers down to the finest feature
/// scale, one stride-1 layer there, then one stride-2 layer per coarser scale.
/// Each scale feeds a 3x3 head emitting one logit and four offsets per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorArch {
    pub anchors: AnchorConfig,
    /// Output channels of the stride-2 stem layers.
    pub stem_channels: Vec<usize>,
    /// Channels of every layer from the finest feature scale on.
    pub feature_channels: usize,
}

impl Default for DetectorArch {
    fn default() -> Self {
        Self { anchors: AnchorConfig::default(), stem_channels: vec![8, 16, 32, 32], feature_channels: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub nms_iou: f64,
    pub score_thresh: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { nms_iou: 0.45, score_thresh: 0.5 }
    }
}

/// Prior foreground probability used to initialise the confidence bias.
const PRIOR_FG: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct Detector {
    arch: DetectorArch,
    store: ParamStore,
    layers: Vec<ConvBn>,
    /// Indices into `layers` whose outputs are feature scales.
    taps: Vec<usize>,
    heads: Vec<Conv2d>,
    anchors: AnchorSet,
    pub inference: InferenceConfig,
    pub loss_cfg: DetectLossConfig,
    seed: u64,
}

/// Image resized to the detector input plus boxes mapped into input space.
#[derive(Debug, Clone)]
pub struct DetectorSample {
    pub input: ImageF32,
    pub boxes: Vec<BBox>,
}

fn spatial(mut side: usize, stride: usize) -> usize {
    if stride == 2 {
        side = (side + 2 - 3) / 2 + 1;
    }
    side
}

impl Detector {
    pub fn new(arch: DetectorArch, seed: u64) -> Result<Self> {
        arch.anchors.validate()?;
        if arch.stem_channels.is_empty() || arch.feature_channels == 0 {
            return Err(Error::invalid("detector needs at least one stem layer"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut layers = Vec::new();
        let mut taps = Vec::new();
        let mut cin = 1;
        let mut side = arch.anchors.input_size;
        for (i, &c) in arch.stem_channels.iter().enumerate() {
            layers.push(ConvBn::new(&mut store, &format!("stem{i}"), cin, c, 3, 2, 1, &mut rng));
            side = spatial(side, 2);
            cin = c;
        }
        let fc = arch.feature_channels;
        let mut sides = Vec::new();
        for s in 0..arch.anchors.feature_sizes.len() {
            let stride = if s == 0 { 1 } else { 2 };
            layers.push(ConvBn::new(&mut store, &format!("feat{s}"), cin, fc, 3, stride, 1, &mut rng));
            side = spatial(side, stride);
            sides.push(side);
            taps.push(layers.len() - 1);
            cin = fc;
        }
        if sides != arch.anchors.feature_sizes {
            return Err(Error::invalid(format!(
                "feature sizes {sides:?} do not match anchor grid {:?}",
                arch.anchors.feature_sizes
            )));
        }
        let prior = (PRIOR_FG / (1.0 - PRIOR_FG)).ln() as f32;
        let mut heads = Vec::new();
        for s in 0..sides.len() {
            let h = Conv2d::new(&mut store, &format!("head{s}"), fc, 5, 3, 1, 1, true, &mut rng);
            for v in store.get_mut(h.weight) {
                *v *= 0.1;
            }
            store.get_mut(h.bias.expect("head bias"))[0] = prior;
            heads.push(h);
        }
        let anchors = AnchorSet::build(&arch.anchors)?;
        Ok(Self {
            arch,
            store,
            layers,
            taps,
            heads,
            anchors,
            inference: InferenceConfig::default(),
            loss_cfg: DetectLossConfig::default(),
            seed,
        })
    }

    pub fn arch(&self) -> &DetectorArch {
        &self.arch
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
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

    pub fn input_size(&self) -> usize {
        self.arch.anchors.input_size
    }

    /// Resizes `image` to the network input and maps `boxes` accordingly.
    pub fn prepare(&self, image: &ImageF32, boxes: &[BBox]) -> Result<DetectorSample> {
        let (w, h) = (image.width(), image.height());
        if w < MIN_INPUT_SIDE || h < MIN_INPUT_SIDE {
            return Err(Error::ImageTooSmall { width: w, height: h, min: MIN_INPUT_SIDE });
        }
        let side = self.input_size();
        let (sx, sy) = (side as f64 / w as f64, side as f64 / h as f64);
        let input = if w == side && h == side { image.clone() } else { image.resize(side, side) };
        Ok(DetectorSample { input, boxes: boxes.iter().map(|b| b.rescale(sx, sy)).collect() })
    }

    fn head_outputs(&self, feats: &[Tensor]) -> Vec<Tensor> {
        self.heads.iter().zip(feats).map(|(h, f)| h.forward(&self.store, f)).collect()
    }

    /// Per-anchor `(offsets, logit)` for each batch element.
    fn unpack(&self, outs: &[Tensor]) -> Vec<(Vec<[f64; 4]>, Vec<f64>)> {
        let n = outs[0].n;
        (0..n)
            .map(|b| {
                let mut offs = Vec::with_capacity(self.anchors.len());
                let mut logits = Vec::with_capacity(self.anchors.len());
                for o in outs {
                    let hw = o.h * o.w;
                    for p in 0..hw {
                        logits.push(o.map(0, b)[p] as f64);
                        offs.push(std::array::from_fn(|k| o.map(1 + k, b)[p] as f64));
                    }
                }
                (offs, logits)
            })
            .collect()
    }

    fn forward_eval(&self, inputs: &[&ImageF32]) -> Vec<(Vec<[f64; 4]>, Vec<f64>)> {
        let mut x = Tensor::from_images(inputs.iter().copied(), 1);
        let mut feats = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward_eval(&self.store, &x);
            x.relu_inplace();
            if self.taps.contains(&i) {
                feats.push(x.clone());
            }
        }
        self.unpack(&self.head_outputs(&feats))
    }

    /// Scored, decoded, unsuppressed candidates in input-pixel space.
    fn candidates(&self, offs: &[[f64; 4]], logits: &[f64]) -> Vec<Detection> {
        let side = self.input_size() as f64;
        self.anchors
            .anchors
            .iter()
            .zip(offs.iter().zip(logits))
            .filter_map(|(a, (o, &z))| {
                decode(a, o).clamp_to(side, side).map(|b| Detection { bbox: b, score: sigmoid(z) })
            })
            .collect()
    }

    /// Femoral-head boxes in the coordinates of `image`.
    pub fn detect_fh(&self, image: &ImageF32) -> Result<Vec<Detection>> {
        Ok(self.detect_batch(std::slice::from_ref(image))?.pop().expect("one result"))
    }

    pub fn detect_batch(&self, images: &[ImageF32]) -> Result<Vec<Vec<Detection>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let prepared: Vec<DetectorSample> = images.iter().map(|im| self.prepare(im, &[])).collect::<Result<_>>()?;
        let inputs: Vec<&ImageF32> = prepared.iter().map(|p| &p.input).collect();
        let raw = self.forward_eval(&inputs);
        let side = self.input_size() as f64;
        Ok(raw
            .iter()
            .zip(images)
            .map(|((offs, logits), im)| {
                let (w, h) = (im.width() as f64, im.height() as f64);
                let kept = nms(&self.candidates(offs, logits), self.inference.nms_iou, self.inference.score_thresh);
                kept.into_iter()
                    .filter_map(|d| {
                        d.bbox.rescale(w / side, h / side).clamp_to(w, h).map(|b| Detection { bbox: b, score: d.score })
                    })
                    .collect()
            })
            .collect())
    }

    /// Highest foreground probability over all anchors.
    pub fn max_score(&self, image: &ImageF32) -> Result<f64> {
        let p = self.prepare(image, &[])?;
        let raw = self.forward_eval(&[&p.input]);
        Ok(raw[0].1.iter().map(|&z| sigmoid(z)).fold(0.0, f64::max))
    }

    /// Mean multi-box loss over a batch in inference mode.
    pub fn eval_loss(&self, batch: &[DetectorSample]) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let inputs: Vec<&ImageF32> = batch.iter().map(|s| &s.input).collect();
        let raw = self.forward_eval(&inputs);
        let mut total = 0.0;
        let mut n_total = 0usize;
        for (s, (offs, logits)) in batch.iter().zip(&raw) {
            let m = match_anchors(&self.anchors, &s.boxes, self.loss_cfg.match_iou);
            let tgt = encode_targets(&self.anchors, &s.boxes, &m);
            let t = multibox_terms(&m, offs, &tgt, logits, &self.loss_cfg);
            total += t.loss * t.n as f64;
            n_total += t.n;
        }
        if n_total == 0 {
            0.0
        } else {
            total / n_total as f64
        }
    }

    /// Training-mode forward and backward pass. The loss is normalised by the
    /// total number of matched anchors in the batch. Updates BN running stats.
    pub fn loss_and_grads(&mut self, batch: &[DetectorSample]) -> (f64, Grads) {
        let mut grads = self.store.zero_grads();
        if batch.is_empty() {
            return (0.0, grads);
        }
        let mut x = Tensor::from_images(batch.iter().map(|s| &s.input), 1);
        let mut caches: Vec<(ConvBnCache, Tensor)> = Vec::with_capacity(self.layers.len());
        let mut feats = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let (mut y, cache) = l.forward_train(&mut self.store, &x);
            y.relu_inplace();
            if self.taps.contains(&i) {
                feats.push(y.clone());
            }
            caches.push((cache, y.clone()));
            x = y;
        }
        let outs = self.head_outputs(&feats);
        let raw = self.unpack(&outs);

        let terms: Vec<_> = batch
            .iter()
            .zip(&raw)
            .map(|(s, (offs, logits))| {
                let m = match_anchors(&self.anchors, &s.boxes, self.loss_cfg.match_iou);
                let tgt = encode_targets(&self.anchors, &s.boxes, &m);
                multibox_terms(&m, offs, &tgt, logits, &self.loss_cfg)
            })
            .collect();
        let n_total: usize = terms.iter().map(|t| t.n).sum();
        if n_total == 0 {
            return (0.0, grads);
        }
        let loss = terms.iter().map(|t| t.loss * t.n as f64).sum::<f64>() / n_total as f64;

        // scatter per-anchor gradients back into head-output layout
        let mut d_outs: Vec<Tensor> = outs.iter().map(|o| Tensor::zeros(o.c, o.n, o.h, o.w)).collect();
        for (b, t) in terms.iter().enumerate() {
            let scale = t.n as f64 / n_total as f64;
            let mut a = 0;
            for d in d_outs.iter_mut() {
                let hw = d.h * d.w;
                for p in 0..hw {
                    d.map_mut(0, b)[p] = (t.d_logits[a] * scale) as f32;
                    for k in 0..4 {
                        d.map_mut(1 + k, b)[p] = (t.d_offsets[a][k] * scale) as f32;
                    }
                    a += 1;
                }
            }
        }
        let mut d_feats: Vec<Tensor> = Vec::new();
        for ((h, f), d) in self.heads.iter().zip(&feats).zip(&d_outs) {
            d_feats.push(h.backward(&self.store, f, d, &mut grads, true).expect("input grad"));
        }
        let mut dx: Option<Tensor> = None;
        for i in (0..self.layers.len()).rev() {
            let (cache, out) = &caches[i];
            let mut d = dx.take().unwrap_or_else(|| Tensor::zeros(out.c, out.n, out.h, out.w));
            if let Some(t) = self.taps.iter().position(|&ti| ti == i) {
                d.add_inplace(&d_feats[t]);
            }
            Tensor::relu_backward_inplace(&mut d, out);
            dx = self.layers[i].backward(&self.store, cache, &d, &mut grads, i > 0);
        }
        (loss, grads)
    }

    fn arch_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.arch).expect("serializable arch")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let extra = serde_json::json!({ "inference": self.inference, "loss": self.loss_cfg });
        write_checkpoint(path, DETECTOR_KIND, DETECTOR_KIND, self.arch_json(), self.seed, extra, &self.store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, store) = read_checkpoint(path)?;
        if header.kind != DETECTOR_KIND {
            return Err(Error::Checkpoint(format!("expected a detector checkpoint, found '{}'", header.kind)));
        }
        let arch: DetectorArch = serde_json::from_value(header.arch.clone())
            .map_err(|e| Error::Checkpoint(format!("detector architecture: {e}")))?;
        let mut model = Detector::new(arch, header.seed)?;
        if model.store.signature() != store.signature() {
            return Err(Error::ArchitectureMismatch("detector parameters differ from architecture".into()));
        }
        model.store = store;
        if let Some(inf) = header.extra.get("inference") {
            model.inference = serde_json::from_value(inf.clone())?;
        }
        if let Some(l) = header.extra.get("loss") {
            model.loss_cfg = serde_json::from_value(l.clone())?;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> DetectorArch {
        DetectorArch {
            anchors: AnchorConfig { input_size: 64, feature_sizes: vec![8, 4], anchor_fractions: vec![0.25, 0.5] },
            stem_channels: vec![4, 4, 4],
            feature_channels: 4,
        }
    }

    #[test]
    fn rejects_inconsistent_grid() {
        let mut a = small_arch();
        a.anchors.feature_sizes = vec![9, 4];
        assert!(Detector::new(a, 0).is_err());
        assert_eq!(Detector::new(DetectorArch::default(), 0).unwrap().anchors().len(), 486);
    }

    #[test]
    fn rejects_tiny_images() {
        let d = Detector::new(small_arch(), 0).unwrap();
        let err = d.detect_fh(&ImageF32::filled(16, 16, 0.0)).unwrap_err();
        assert!(matches!(err, Error::ImageTooSmall { .. }));
    }

    #[test]
    fn untrained_model_is_quiet_and_boxes_are_valid() {
        let mut d = Detector::new(small_arch(), 1).unwrap();
        d.inference.score_thresh = 0.0;
        let img = ImageF32::filled(100, 80, 0.3);
        let dets = d.detect_fh(&img).unwrap();
        for det in &dets {
            det.bbox.validate().unwrap();
            assert!(det.bbox.x_min >= 0.0 && det.bbox.x_max <= 100.0);
            assert!(det.bbox.y_min >= 0.0 && det.bbox.y_max <= 80.0);
        }
        assert!(d.max_score(&img).unwrap() < 0.05);
    }

    #[test]
    fn backbone_gradient_matches_finite_difference() {
        let mut d = Detector::new(small_arch(), 3).unwrap();
        let mut data = vec![0.0f32; 64 * 64];
        for (i, v) in data.iter_mut().enumerate() {
            *v = ((i * 37 % 101) as f32) / 101.0;
        }
        let img = ImageF32::new(64, 64, data).unwrap();
        let sample = d.prepare(&img, &[BBox::new(10.0, 12.0, 28.0, 30.0).unwrap()]).unwrap();
        let batch = vec![sample.clone(), sample];
        let (_, grads) = d.loss_and_grads(&batch);
        let snapshot = d.store.clone();
        for (name, idx) in [
            ("head0.weight", 3usize),
            ("feat1.bn.gamma", 1),
            ("stem1.conv.weight", 0),
            ("stem1.conv.weight", 7),
            ("stem0.bn.beta", 2),
        ] {
            let id = d.store.find(name).unwrap();
            let h = 1e-3f32;
            let mut plus = snapshot.clone();
            plus.get_mut(id)[idx] += h;
            let mut minus = snapshot.clone();
            minus.get_mut(id)[idx] -= h;
            d.store = plus;
            let lp = d.loss_and_grads(&batch).0;
            d.store = minus;
            let lm = d.loss_and_grads(&batch).0;
            let fd = (lp - lm) / (2.0 * h as f64);
            let an = grads.get(id)[idx] as f64;
            d.store = snapshot.clone();
            assert!((fd - an).abs() <= 1e-2 * fd.abs().max(an.abs()).max(1e-3), "{name}[{idx}]: fd {fd} vs {an}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.ckpt");
        let mut d = Detector::new(small_arch(), 5).unwrap();
        d.inference.score_thresh = 0.4;
        d.save(&path).unwrap();
        let e = Detector::load(&path).unwrap();
        assert_eq!(e.store().params(), d.store().params());
        assert_eq!(e.inference, d.inference);
    }
}
