use serde::{Deserialize, Serialize};

use crate::classification::labels::{NoteClass, Side, Stage, View};
use crate::detection::BBox;
use crate::error::{Error, Result};

/// Labels of one femoral head to render.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub stage: Stage,
    pub notes: Vec<NoteClass>,
    pub side: Side,
}

impl HeadSpec {
    pub fn new(stage: Stage, notes: Vec<NoteClass>, side: Side) -> Self {
        Self { stage, notes, side }
    }

    pub fn absence(side: Side) -> Self {
        Self { stage: Stage::Absence, notes: Vec::new(), side }
    }
}

/// Everything needed to render one synthetic pelvic radiograph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub image_size: usize,
    pub heads: Vec<HeadSpec>,
    pub view: View,
    pub subject_id: String,
    pub typical: bool,
    /// 0 is noise-free with full lesion contrast; 1 is the hardest setting.
    pub noise_level: f64,
    pub seed: u64,
}

pub const DEFAULT_IMAGE_SIZE: usize = 768;
pub const MIN_IMAGE_SIZE: usize = 128;

impl PhantomSpec {
    pub fn new(heads: Vec<HeadSpec>, view: View, seed: u64) -> Self {
        Self {
            image_size: DEFAULT_IMAGE_SIZE,
            heads,
            view,
            subject_id: format!("phantom-{seed}"),
            typical: true,
            noise_level: 0.0,
            seed,
        }
    }

    pub fn with_noise(mut self, noise_level: f64) -> Self {
        self.noise_level = noise_level;
        self
    }

    pub fn with_size(mut self, image_size: usize) -> Self {
        self.image_size = image_size;
        self
    }

    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.heads.len()) {
            return Err(Error::invalid(format!("n_heads must be 1 or 2, got {}", self.heads.len())));
        }
        if self.heads.len() == 2 && self.heads[0].side == self.heads[1].side {
            return Err(Error::invalid("two heads must be on different sides"));
        }
        for h in &self.heads {
            check_notes(h.stage, &h.notes)?;
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::invalid(format!("noise_level {} outside [0, 1]", self.noise_level)));
        }
        if self.image_size < MIN_IMAGE_SIZE {
            return Err(Error::invalid(format!("image_size {} below {MIN_IMAGE_SIZE}", self.image_size)));
        }
        Ok(())
    }
}

/// Notes must belong to the head's stage; duplicates are rejected.
pub fn check_notes(stage: Stage, notes: &[NoteClass]) -> Result<()> {
    for (i, n) in notes.iter().enumerate() {
        if n.owning_stage() != stage {
            return Err(Error::invalid(format!("note {} does not belong to stage {stage}", n.key())));
        }
        if notes[..i].contains(n) {
            return Err(Error::invalid(format!("duplicate note {}", n.key())));
        }
    }
    Ok(())
}

/// Ground truth of one rendered head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTruth {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub stage: Stage,
    pub notes: Vec<NoteClass>,
    pub side: Side,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rules() {
        let ok = PhantomSpec::new(vec![HeadSpec::absence(Side::Left)], View::AP, 1);
        ok.validate().unwrap();
        let mut bad = ok.clone();
        bad.heads.clear();
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.heads = vec![HeadSpec::absence(Side::Left); 3];
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.heads = vec![HeadSpec::absence(Side::Left), HeadSpec::absence(Side::Left)];
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.heads[0] = HeadSpec::new(Stage::Absence, vec![NoteClass::CysticChange], Side::Left);
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.heads[0] = HeadSpec::new(Stage::III, vec![NoteClass::CysticChange], Side::Left);
        assert!(bad.validate().is_err());
    }
}
