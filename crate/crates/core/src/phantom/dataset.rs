use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::generate_phantom;
use super::spec::{check_notes, HeadSpec, HeadTruth, PhantomSpec, DEFAULT_IMAGE_SIZE};
use crate::classification::labels::{NoteClass, Side, Stage, View};
use crate::error::{Error, Result};
use crate::imaging::ImageF32;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

/// Fractions of subjects imaged in AP only, FL only, or both views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewMix {
    pub ap_only: f64,
    pub fl_only: f64,
    pub both: f64,
}

impl Default for ViewMix {
    fn default() -> Self {
        Self { ap_only: 0.0, fl_only: 0.0, both: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Total subjects, test subjects included.
    pub n_subjects: usize,
    /// Subjects held out with split tag `test`.
    pub n_test_subjects: usize,
    /// Proportions of Absence, II, III, IV heads.
    pub stage_mix: [f64; 4],
    pub view_mix: ViewMix,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub image_size: usize,
    /// Nominal noise level; each subject draws from `[0.5, 1.5]` times it.
    pub noise: f64,
    /// Fraction of subjects with both hips in the field of view.
    pub two_head_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_subjects: 40,
            n_test_subjects: 0,
            stage_mix: [0.25; 4],
            view_mix: ViewMix::default(),
            out_dir: PathBuf::from("data"),
            seed: 0,
            image_size: DEFAULT_IMAGE_SIZE,
            noise: 0.3,
            two_head_fraction: 0.85,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.stage_mix.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.stage_mix.iter().any(|p| *p < 0.0) {
            return Err(Error::invalid(format!("stage_mix must be nonnegative and sum to 1, got {sum}")));
        }
        let v = self.view_mix;
        if ((v.ap_only + v.fl_only + v.both) - 1.0).abs() > 1e-9 || v.ap_only < 0.0 || v.fl_only < 0.0 || v.both < 0.0 {
            return Err(Error::invalid("view_mix must be nonnegative and sum to 1"));
        }
        if self.n_subjects == 0 || self.n_test_subjects > self.n_subjects {
            return Err(Error::invalid("need n_subjects >= 1 and n_test_subjects <= n_subjects"));
        }
        if !(0.0..=1.0).contains(&self.noise) || !(0.0..=1.0).contains(&self.two_head_fraction) {
            return Err(Error::invalid("noise and two_head_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One image entry of the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_path: String,
    pub split_tag: SplitTag,
    pub view: View,
    pub subject_id: String,
    pub typical: bool,
    pub heads: Vec<HeadTruth>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestHeader {
    schema_version: u32,
}

/// Dataset index; image paths are relative to `root`.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub root: PathBuf,
}

impl PartialEq for Manifest {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
    }
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>, root: impl Into<PathBuf>) -> Self {
        Self { records, root: root.into() }
    }

    pub fn image_path(&self, rec: &ManifestRecord) -> PathBuf {
        self.root.join(&rec.image_path)
    }

    pub fn load_image(&self, rec: &ManifestRecord) -> Result<ImageF32> {
        ImageF32::load(self.image_path(rec))
    }

    /// Records carrying `tag`, sharing this manifest's root.
    pub fn split(&self, tag: SplitTag) -> Manifest {
        Manifest {
            records: self.records.iter().filter(|r| r.split_tag == tag).cloned().collect(),
            root: self.root.clone(),
        }
    }

    /// Sorted distinct subject ids.
    pub fn subjects(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.records.iter().map(|r| &r.subject_id).collect();
        set.into_iter().cloned().collect()
    }

    /// Records whose subject is in `subjects`.
    pub fn restrict(&self, subjects: &BTreeSet<String>) -> Manifest {
        Manifest {
            records: self.records.iter().filter(|r| subjects.contains(&r.subject_id)).cloned().collect(),
            root: self.root.clone(),
        }
    }

    pub fn n_heads(&self) -> usize {
        self.records.iter().map(|r| r.heads.len()).sum()
    }

    /// Structural checks; with `check_files`, also that every image exists.
    pub fn validate(&self, check_files: bool) -> Result<()> {
        let mut splits: BTreeMap<&str, SplitTag> = BTreeMap::new();
        for rec in &self.records {
            if let Some(&prev) = splits.get(rec.subject_id.as_str()) {
                if prev != rec.split_tag {
                    return Err(Error::ManifestInvalid(format!(
                        "subject '{}' appears in both train and test splits",
                        rec.subject_id
                    )));
                }
            }
            splits.insert(&rec.subject_id, rec.split_tag);
            if rec.heads.is_empty() || rec.heads.len() > 2 {
                return Err(Error::ManifestInvalid(format!("{}: expected 1 or 2 heads", rec.image_path)));
            }
            for h in &rec.heads {
                h.bbox.validate().map_err(|e| Error::ManifestInvalid(format!("{}: {e}", rec.image_path)))?;
                check_notes(h.stage, &h.notes)
                    .map_err(|e| Error::ManifestInvalid(format!("{}: {e}", rec.image_path)))?;
            }
            if check_files && !self.image_path(rec).is_file() {
                return Err(Error::ManifestInvalid(format!("missing image {}", self.image_path(rec).display())));
            }
        }
        Ok(())
    }

    /// JSON Lines: a schema header, then one record per image.
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "{}", serde_json::to_string(&ManifestHeader { schema_version: MANIFEST_SCHEMA_VERSION })?)
            .map_err(io)?;
        for r in &self.records {
            writeln!(w, "{}", serde_json::to_string(r)?).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Reads and validates a manifest; image paths resolve against its directory.
    pub fn read(path: &Path) -> Result<Manifest> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let first = match lines.next() {
            None => return Err(Error::SchemaVersion { found: 0, expected: MANIFEST_SCHEMA_VERSION }),
            Some(l) => l.map_err(|e| Error::io(path, e))?,
        };
        let header: ManifestHeader = serde_json::from_str(&first)
            .map_err(|_| Error::SchemaVersion { found: 0, expected: MANIFEST_SCHEMA_VERSION })?;
        if header.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::SchemaVersion { found: header.schema_version, expected: MANIFEST_SCHEMA_VERSION });
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(&line)
                .map_err(|e| Error::ManifestParse { line: i + 2, message: e.to_string() })?;
            records.push(rec);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Manifest { records, root };
        m.validate(true)?;
        Ok(m)
    }
}

/// Deterministic per-image seed.
fn mix_seed(seed: u64, subject: u64, view: u64) -> u64 {
    let mut z = seed ^ subject.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ view.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Integer counts proportional to `props` summing to `total` (largest remainder,
/// ties to the lower index).
fn apportion(props: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut rest = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        if props[i] > 0.0 {
            counts[i] += 1;
            rest -= 1;
        }
    }
    counts
}

fn random_notes(stage: Stage, rng: &mut ChaCha8Rng) -> Vec<NoteClass> {
    let pool = stage.notes();
    if pool.is_empty() {
        return Vec::new();
    }
    loop {
        let pick: Vec<NoteClass> = pool.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
        if !pick.is_empty() {
            return pick;
        }
    }
}

/// An image to render and where it belongs.
#[derive(Debug, Clone)]
pub struct PlannedImage {
    pub spec: PhantomSpec,
    pub split: SplitTag,
    pub image_path: String,
}

/// Decides every subject's heads, labels, views and noise without rendering.
pub fn plan_dataset(cfg: &DatasetConfig) -> Result<Vec<PlannedImage>> {
    cfg.validate()?;
    for (stage, p) in Stage::ALL.iter().zip(cfg.stage_mix) {
        if p == 0.0 {
            log::warn!("stage_mix requests no {stage} heads");
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_train = cfg.n_subjects - cfg.n_test_subjects;
    let mut plan = Vec::new();
    for (split, range) in [(SplitTag::Train, 0..n_train), (SplitTag::Test, n_train..cfg.n_subjects)] {
        let n = range.len();
        if n == 0 {
            continue;
        }
        let n_heads: Vec<usize> = (0..n).map(|_| if rng.random_bool(cfg.two_head_fraction) { 2 } else { 1 }).collect();
        let total: usize = n_heads.iter().sum();
        let mut stages: Vec<Stage> = apportion(&cfg.stage_mix, total)
            .iter()
            .zip(Stage::ALL)
            .flat_map(|(&c, s)| std::iter::repeat_n(s, c))
            .collect();
        stages.shuffle(&mut rng);
        let vm = cfg.view_mix;
        let mut views: Vec<Vec<View>> = apportion(&[vm.ap_only, vm.fl_only, vm.both], n)
            .iter()
            .zip([vec![View::AP], vec![View::FL], vec![View::AP, View::FL]])
            .flat_map(|(&c, v)| std::iter::repeat_n(v, c))
            .collect();
        views.shuffle(&mut rng);
        let mut next = 0;
        for (local, subject) in range.enumerate() {
            let mut heads = Vec::new();
            let sides: Vec<Side> = if n_heads[local] == 2 {
                vec![Side::Right, Side::Left]
            } else if rng.random_bool(0.5) {
                vec![Side::Right]
            } else {
                vec![Side::Left]
            };
            for side in sides {
                let stage = stages[next];
                next += 1;
                heads.push(HeadSpec::new(stage, random_notes(stage, &mut rng), side));
            }
            let noise_level = (cfg.noise * rng.random_range(0.5..1.5)).clamp(0.0, 1.0);
            let typical = noise_level <= 0.75 * cfg.noise;
            let subject_id = format!("S{:04}", subject + 1);
            for &view in &views[local] {
                let spec = PhantomSpec {
                    image_size: cfg.image_size,
                    heads: heads.clone(),
                    view,
                    subject_id: subject_id.clone(),
                    typical,
                    noise_level,
                    seed: mix_seed(cfg.seed, subject as u64, view.index() as u64),
                };
                let image_path = format!("images/{subject_id}_{view:?}.png");
                plan.push(PlannedImage { spec, split, image_path });
            }
        }
    }
    Ok(plan)
}

/// Renders the planned dataset into `cfg.out_dir` and writes `manifest.jsonl`.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Manifest> {
    let plan = plan_dataset(cfg)?;
    let img_dir = cfg.out_dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let records: Vec<ManifestRecord> = plan
        .par_iter()
        .map(|p| {
            let sample = generate_phantom(&p.spec)?;
            sample.image.save_png(cfg.out_dir.join(&p.image_path))?;
            Ok(ManifestRecord {
                image_path: p.image_path.clone(),
                split_tag: p.split,
                view: sample.view,
                subject_id: sample.subject_id,
                typical: sample.typical,
                heads: sample.ground_truth,
            })
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest::new(records, &cfg.out_dir);
    manifest.validate(true)?;
    manifest.write(&cfg.out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_is_exact() {
        assert_eq!(apportion(&[0.25; 4], 18), vec![5, 5, 4, 4]);
        assert_eq!(apportion(&[1.0, 0.0, 0.0, 0.0], 7), vec![7, 0, 0, 0]);
        assert_eq!(apportion(&[0.0, 0.0, 1.0], 3), vec![0, 0, 3]);
        for n in 1..50 {
            assert_eq!(apportion(&[0.1, 0.2, 0.3, 0.4], n).iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn plan_respects_mix_and_views() {
        let cfg = DatasetConfig { n_subjects: 30, n_test_subjects: 10, ..Default::default() };
        let plan = plan_dataset(&cfg).unwrap();
        // both views per subject
        assert_eq!(plan.len(), 60);
        for split in [SplitTag::Train, SplitTag::Test] {
            let mut counts = [0usize; 4];
            let mut total = 0;
            for p in plan.iter().filter(|p| p.split == split && p.spec.view == View::AP) {
                for h in &p.spec.heads {
                    counts[h.stage.index()] += 1;
                    total += 1;
                }
            }
            for c in counts {
                assert!((c as f64 / total as f64 - 0.25).abs() <= 0.05);
            }
        }
        // both views of a subject carry identical labels
        for pair in plan.chunks(2) {
            assert_eq!(pair[0].spec.heads, pair[1].spec.heads);
            assert_ne!(pair[0].spec.view, pair[1].spec.view);
        }
    }
}
