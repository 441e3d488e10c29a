//! Label vocabulary shared by every module: stages, notes, sides and views.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Radiographic AVNFH stage, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    /// Stages 0 and I combined (not visible on plain film).
    Absence,
    II,
    III,
    IV,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Absence, Stage::II, Stage::III, Stage::IV];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Stage> {
        Self::ALL.get(i).copied()
    }

    /// AVNFH presence grouping (stages II to IV).
    pub fn is_present(self) -> bool {
        self != Stage::Absence
    }

    pub fn collapse_group(self) -> CollapseGroup {
        match self {
            Stage::Absence => CollapseGroup::Absence,
            Stage::II => CollapseGroup::PreCollapse,
            Stage::III | Stage::IV => CollapseGroup::PostCollapse,
        }
    }

    pub fn notes(self) -> &'static [NoteClass] {
        use NoteClass::*;
        match self {
            Stage::Absence => &[],
            Stage::II => &[ScleroticChange, CysticChange, CrescentSignNoFlattening],
            Stage::III => &[SubchondralFlatteningCollapse, FhDeformation],
            Stage::IV => &[FhAndAcetabularDeformation, JointSpaceStenosis],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Stage::Absence => "Absence",
            Stage::II => "II",
            Stage::III => "III",
            Stage::IV => "IV",
        }
    }

    /// Stage with the highest probability; ties go to the more severe stage.
    pub fn argmax_severe(probs: &[f64]) -> Stage {
        assert_eq!(probs.len(), Stage::COUNT, "stage probability vector length");
        let mut best = 0;
        for i in 1..Stage::COUNT {
            if probs[i] >= probs[best] {
                best = i;
            }
        }
        Stage::ALL[best]
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Absence / pre-collapse (II) / post-collapse (III, IV).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CollapseGroup {
    Absence,
    PreCollapse,
    PostCollapse,
}

impl CollapseGroup {
    pub const ALL: [CollapseGroup; 3] =
        [CollapseGroup::Absence, CollapseGroup::PreCollapse, CollapseGroup::PostCollapse];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Atomic clinical note; each belongs to exactly one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteClass {
    ScleroticChange,
    CysticChange,
    CrescentSignNoFlattening,
    SubchondralFlatteningCollapse,
    FhDeformation,
    FhAndAcetabularDeformation,
    JointSpaceStenosis,
}

impl NoteClass {
    pub const ALL: [NoteClass; 7] = [
        NoteClass::ScleroticChange,
        NoteClass::CysticChange,
        NoteClass::CrescentSignNoFlattening,
        NoteClass::SubchondralFlatteningCollapse,
        NoteClass::FhDeformation,
        NoteClass::FhAndAcetabularDeformation,
        NoteClass::JointSpaceStenosis,
    ];
    pub const COUNT: usize = 7;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn owning_stage(self) -> Stage {
        use NoteClass::*;
        match self {
            ScleroticChange | CysticChange | CrescentSignNoFlattening => Stage::II,
            SubchondralFlatteningCollapse | FhDeformation => Stage::III,
            FhAndAcetabularDeformation | JointSpaceStenosis => Stage::IV,
        }
    }

    pub fn phrase(self) -> &'static str {
        use NoteClass::*;
        match self {
            ScleroticChange => "sclerotic change",
            CysticChange => "cystic change",
            CrescentSignNoFlattening => "crescent sign without FH flattening",
            SubchondralFlatteningCollapse => "subchondral flattening/collapse",
            FhDeformation => "FH deformation",
            FhAndAcetabularDeformation => "FH and acetabular deformation",
            JointSpaceStenosis => "joint space stenosis",
        }
    }

    pub fn key(self) -> &'static str {
        use NoteClass::*;
        match self {
            ScleroticChange => "sclerotic_change",
            CysticChange => "cystic_change",
            CrescentSignNoFlattening => "crescent_sign_no_flattening",
            SubchondralFlatteningCollapse => "subchondral_flattening_collapse",
            FhDeformation => "fh_deformation",
            FhAndAcetabularDeformation => "fh_and_acetabular_deformation",
            JointSpaceStenosis => "joint_space_stenosis",
        }
    }

    /// Multi-hot encoding in [`NoteClass::ALL`] order.
    pub fn multi_hot(notes: &[NoteClass]) -> [f32; NoteClass::COUNT] {
        let mut v = [0.0; NoteClass::COUNT];
        for n in notes {
            v[n.index()] = 1.0;
        }
        v
    }
}

/// Anatomical side of a femoral head. On an AP film the patient's right hip
/// appears on the image's left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const ALL: [Side; 2] = [Side::Left, Side::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn flipped(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// Exam view: anteroposterior or frog-leg lateral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum View {
    AP,
    FL,
}

impl View {
    pub const ALL: [View; 2] = [View::AP, View::FL];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_order_and_groupings() {
        assert!(Stage::Absence < Stage::II && Stage::II < Stage::III && Stage::III < Stage::IV);
        let present: Vec<bool> = Stage::ALL.iter().map(|s| s.is_present()).collect();
        assert_eq!(present, vec![false, true, true, true]);
        let groups: Vec<CollapseGroup> = Stage::ALL.iter().map(|s| s.collapse_group()).collect();
        // surjective onto all three groups
        for g in CollapseGroup::ALL {
            assert!(groups.contains(&g));
        }
    }

    #[test]
    fn note_ownership_is_total_and_consistent() {
        for n in NoteClass::ALL {
            assert!(n.owning_stage().notes().contains(&n));
        }
        let total: usize = Stage::ALL.iter().map(|s| s.notes().len()).sum();
        assert_eq!(total, NoteClass::COUNT);
        assert!(Stage::Absence.notes().is_empty());
    }

    #[test]
    fn argmax_breaks_ties_toward_severity() {
        assert_eq!(Stage::argmax_severe(&[0.4, 0.4, 0.1, 0.1]), Stage::II);
        assert_eq!(Stage::argmax_severe(&[0.25; 4]), Stage::IV);
        assert_eq!(Stage::argmax_severe(&[0.7, 0.1, 0.1, 0.1]), Stage::Absence);
    }

    #[test]
    fn serde_names() {
        assert_eq!(serde_json::to_string(&Stage::II).unwrap(), "\"II\"");
        assert_eq!(serde_json::to_string(&NoteClass::ScleroticChange).unwrap(), "\"sclerotic_change\"");
        assert_eq!(
            serde_json::to_string(&NoteClass::CrescentSignNoFlattening).unwrap(),
            "\"crescent_sign_no_flattening\""
        );
        for n in NoteClass::ALL {
            assert_eq!(serde_json::to_string(&n).unwrap(), format!("\"{}\"", n.key()));
        }
    }
}
