//! Stage-prior rectification of note probabilities and caption rendering.

use serde::{Deserialize, Serialize};

use super::labels::{NoteClass, Stage};

/// Default emission threshold on rectified probabilities.
pub const DEFAULT_NOTE_TAU: f64 = 0.3;

/// `out_k = note_k * stage[owner(k)]`, no renormalisation.
pub fn rectify_note_probs(
    note_probs: &[f64; NoteClass::COUNT],
    stage_probs: &[f64; Stage::COUNT],
) -> [f64; NoteClass::COUNT] {
    std::array::from_fn(|k| note_probs[k] * stage_probs[NoteClass::ALL[k].owning_stage().index()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteEmission {
    /// Sorted by rectified probability, highest first.
    pub notes: Vec<NoteClass>,
    /// Set when a diseased stage was predicted but no note cleared the threshold.
    pub low_confidence: bool,
}

pub fn emit_notes(rectified: &[f64; NoteClass::COUNT], stage: Stage, tau: f64) -> NoteEmission {
    if stage == Stage::Absence {
        return NoteEmission { notes: Vec::new(), low_confidence: false };
    }
    let mut picked: Vec<(NoteClass, f64)> = NoteClass::ALL
        .iter()
        .map(|&n| (n, rectified[n.index()]))
        .filter(|&(n, p)| p >= tau && n.owning_stage() == stage)
        .collect();
    picked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.index().cmp(&b.0.index())));
    let low_confidence = picked.is_empty();
    NoteEmission { notes: picked.into_iter().map(|(n, _)| n).collect(), low_confidence }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Human-readable finding list in canonical note order, e.g. "Sclerotic and cystic changes".
pub fn notes_text(notes: &[NoteClass]) -> String {
    use NoteClass::*;
    let mut ordered: Vec<NoteClass> = notes.to_vec();
    ordered.sort_by_key(|n| n.index());
    ordered.dedup();
    if ordered.is_empty() {
        return "No findings".to_string();
    }
    let mut parts: Vec<String> = Vec::new();
    let both = ordered.contains(&ScleroticChange) && ordered.contains(&CysticChange);
    for n in ordered {
        match n {
            ScleroticChange if both => parts.push("sclerotic and cystic changes".into()),
            CysticChange if both => {}
            other => parts.push(other.phrase().into()),
        }
    }
    let text = match parts.len() {
        1 => parts.remove(0),
        _ => {
            let last = parts.pop().expect("two or more parts");
            format!("{}; {}", parts.join("; "), last)
        }
    };
    capitalize(&text)
}

/// Figure-style caption such as "AVNFH stage II: Sclerotic and cystic changes".
pub fn caption(stage: Stage, emission: &NoteEmission) -> String {
    let head = match stage {
        Stage::Absence => return "AVNFH absence: No findings".to_string(),
        s => format!("AVNFH stage {}", s.label()),
    };
    if emission.notes.is_empty() {
        format!("{head}: No confident findings (low confidence)")
    } else {
        format!("{head}: {}", notes_text(&emission.notes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rectification_cases() {
        let r = rectify_note_probs(&[1.0; 7], &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(r, [0.2, 0.2, 0.2, 0.3, 0.3, 0.4, 0.4]);
        let r = rectify_note_probs(&[0.8; 7], &[0.0, 0.5, 0.0, 0.5]);
        assert_eq!(r[0], 0.4);
        assert_eq!((r[3], r[4]), (0.0, 0.0));
    }

    #[test]
    fn emission_filters_by_stage_and_threshold() {
        let r = [0.6, 0.1, 0.05, 0.9, 0.0, 0.0, 0.0];
        let e = emit_notes(&r, Stage::II, 0.3);
        assert_eq!(e.notes, vec![NoteClass::ScleroticChange]);
        assert!(!e.low_confidence);
        let e = emit_notes(&[0.1; 7], Stage::IV, 0.3);
        assert!(e.notes.is_empty() && e.low_confidence);
        let e = emit_notes(&[0.9; 7], Stage::Absence, 0.3);
        assert!(e.notes.is_empty() && !e.low_confidence);
    }

    #[test]
    fn captions_follow_figure_wording() {
        let none = NoteEmission { notes: vec![], low_confidence: false };
        assert_eq!(caption(Stage::Absence, &none), "AVNFH absence: No findings");
        let e =
            NoteEmission { notes: vec![NoteClass::CysticChange, NoteClass::ScleroticChange], low_confidence: false };
        assert_eq!(caption(Stage::II, &e), "AVNFH stage II: Sclerotic and cystic changes");
        let e = NoteEmission { notes: vec![NoteClass::SubchondralFlatteningCollapse], low_confidence: false };
        assert_eq!(caption(Stage::III, &e), "AVNFH stage III: Subchondral flattening/collapse");
        let e = NoteEmission { notes: vec![NoteClass::FhAndAcetabularDeformation], low_confidence: false };
        assert_eq!(caption(Stage::IV, &e), "AVNFH stage IV: FH and acetabular deformation");
    }
}
