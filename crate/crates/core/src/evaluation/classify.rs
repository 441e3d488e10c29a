use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::agreement::{cohens_kappa, KappaResult};
use super::bootstrap::{bootstrap_ci, BootstrapCi, BootstrapConfig};
use super::roc::{auc_mann_whitney, operating_point, roc_auc, OperatingPoint};
use super::uncertainty::{uncertainty_histogram, UncertaintyHistogram};
use crate::classification::{NoteClass, Stage, View};

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}

/// `m[truth][pred]` counts.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        m[t][p] += 1;
    }
    m
}

/// Per-class F1 = `2TP / (2TP + FP + FN)`; `None` for classes absent from both vectors.
pub fn per_class_f1(pred: &[usize], truth: &[usize], k: usize) -> Vec<Option<f64>> {
    let m = confusion_matrix(pred, truth, k);
    (0..k)
        .map(|c| {
            let tp = m[c][c];
            let fn_: usize = m[c].iter().sum::<usize>() - tp;
            let fp: usize = (0..k).map(|t| m[t][c]).sum::<usize>() - tp;
            let d = 2 * tp + fp + fn_;
            (d > 0).then(|| 2.0 * tp as f64 / d as f64)
        })
        .collect()
}

/// Unweighted mean of the defined per-class F1 scores.
pub fn macro_f1(pred: &[usize], truth: &[usize], k: usize) -> Option<f64> {
    let f: Vec<f64> = per_class_f1(pred, truth, k).into_iter().flatten().collect();
    (!f.is_empty()).then(|| f.iter().sum::<f64>() / f.len() as f64)
}

/// One-vs-rest AUC for each class; `None` where a class is absent or universal.
pub fn one_vs_rest_auc(probs: &[Vec<f64>], truth: &[usize], k: usize) -> Vec<Option<f64>> {
    (0..k)
        .map(|c| {
            let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let l: Vec<bool> = truth.iter().map(|&t| t == c).collect();
            auc_mann_whitney(&s, &l).ok()
        })
        .collect()
}

fn mean_defined(v: &[Option<f64>]) -> Option<f64> {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageClassReport {
    pub stage: Stage,
    pub support: usize,
    pub auc: Option<f64>,
    pub operating_point: Option<OperatingPoint>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagingReport {
    pub n: usize,
    pub per_class: Vec<StageClassReport>,
    /// Mean of the defined one-vs-rest AUCs.
    pub macro_auc: Option<f64>,
    /// Absence vs presence, scored by `1 - p(Absence)`.
    pub presence_auc: Option<f64>,
    /// Pre-collapse (II) vs rest, scored by `p(II)`.
    pub pre_collapse_auc: Option<f64>,
    /// Post-collapse (III, IV) vs rest, scored by `p(III) + p(IV)`.
    pub post_collapse_auc: Option<f64>,
    pub accuracy: f64,
    pub macro_f1: Option<f64>,
    pub macro_f1_ci: Option<BootstrapCi>,
    /// Rows are true stages, columns predicted.
    pub confusion: Vec<Vec<usize>>,
    pub kappa_vs_truth: Option<KappaResult>,
    pub uncertainty: UncertaintyHistogram,
}

fn binary_auc(scores: impl Iterator<Item = f64>, labels: impl Iterator<Item = bool>) -> Option<f64> {
    let s: Vec<f64> = scores.collect();
    let l: Vec<bool> = labels.collect();
    auc_mann_whitney(&s, &l).ok()
}

/// Full staging metric taxonomy; predictions are severity-tie-broken argmaxes.
pub fn staging_report(probs: &[[f64; Stage::COUNT]], truth: &[Stage], boot: Option<&BootstrapConfig>) -> StagingReport {
    assert_eq!(probs.len(), truth.len(), "one label per case");
    let pred: Vec<usize> = probs.iter().map(|p| Stage::argmax_severe(p).index()).collect();
    let t: Vec<usize> = truth.iter().map(|s| s.index()).collect();
    let k = Stage::COUNT;
    let vprobs: Vec<Vec<f64>> = probs.iter().map(|p| p.to_vec()).collect();
    let aucs = one_vs_rest_auc(&vprobs, &t, k);
    let f1s = per_class_f1(&pred, &t, k);
    let per_class = Stage::ALL
        .iter()
        .map(|&s| {
            let c = s.index();
            let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let labels: Vec<bool> = t.iter().map(|&x| x == c).collect();
            StageClassReport {
                stage: s,
                support: labels.iter().filter(|&&l| l).count(),
                auc: aucs[c],
                operating_point: roc_auc(&scores, &labels).ok().map(|r| operating_point(&r)),
                f1: f1s[c],
            }
        })
        .collect();
    let macro_f1_ci = boot.and_then(|cfg| {
        bootstrap_ci(
            t.len(),
            |idx: &[usize]| {
                let p: Vec<usize> = idx.iter().map(|&i| pred[i]).collect();
                let y: Vec<usize> = idx.iter().map(|&i| t[i]).collect();
                macro_f1(&p, &y, k)
            },
            cfg,
        )
        .ok()
    });
    StagingReport {
        n: probs.len(),
        per_class,
        macro_auc: mean_defined(&aucs),
        presence_auc: binary_auc(probs.iter().map(|p| 1.0 - p[0]), truth.iter().map(|s| s.is_present())),
        pre_collapse_auc: binary_auc(probs.iter().map(|p| p[1]), truth.iter().map(|&s| s == Stage::II)),
        post_collapse_auc: binary_auc(
            probs.iter().map(|p| p[2] + p[3]),
            truth.iter().map(|&s| matches!(s, Stage::III | Stage::IV)),
        ),
        accuracy: accuracy(&pred, &t),
        macro_f1: macro_f1(&pred, &t, k),
        macro_f1_ci,
        confusion: confusion_matrix(&pred, &t, k),
        kappa_vs_truth: cohens_kappa(&pred, &t).ok(),
        uncertainty: uncertainty_histogram(probs, truth),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryReport {
    pub n: usize,
    pub accuracy: f64,
    /// AUC of the class-1 probability.
    pub auc: Option<f64>,
}

/// Two-class head summary from `[p0, p1]` outputs.
pub fn binary_report(probs: &[Vec<f64>], truth: &[usize]) -> BinaryReport {
    let pred: Vec<usize> = probs.iter().map(|p| usize::from(p[1] > p[0])).collect();
    BinaryReport {
        n: probs.len(),
        accuracy: accuracy(&pred, truth),
        auc: binary_auc(probs.iter().map(|p| p[1]), truth.iter().map(|&t| t == 1)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotesReport {
    pub n: usize,
    /// Per-note AUC in canonical note order.
    pub auc: Vec<Option<f64>>,
    pub macro_auc: Option<f64>,
    /// Micro-averaged F1 of thresholded notes against the multi-hot truth.
    pub micro_f1: f64,
}

pub fn notes_report(probs: &[[f64; NoteClass::COUNT]], truth: &[[f32; NoteClass::COUNT]], tau: f64) -> NotesReport {
    let auc: Vec<Option<f64>> = (0..NoteClass::COUNT)
        .map(|k| binary_auc(probs.iter().map(|p| p[k]), truth.iter().map(|t| t[k] > 0.5)))
        .collect();
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, t) in probs.iter().zip(truth) {
        for k in 0..NoteClass::COUNT {
            match (p[k] >= tau, t[k] > 0.5) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    let d = 2 * tp + fp + fn_;
    NotesReport {
        n: probs.len(),
        macro_auc: mean_defined(&auc),
        auc,
        micro_f1: if d == 0 { 0.0 } else { 2.0 * tp as f64 / d as f64 },
    }
}

/// A per-radiograph stage call attributed to a subject and view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewCall {
    pub subject_id: String,
    pub view: View,
    pub stage: Stage,
}

/// Fraction of truly diseased subjects whose most severe call over `views`
/// is a presence stage. Subjects without any call in `views` count as missed,
/// so the denominator is the same for every view set.
pub fn subject_presence_sensitivity(
    calls: &[ViewCall],
    truth: &BTreeMap<String, Stage>,
    views: &[View],
) -> Option<f64> {
    let mut worst: BTreeMap<&str, Stage> = BTreeMap::new();
    for c in calls.iter().filter(|c| views.contains(&c.view)) {
        let e = worst.entry(c.subject_id.as_str()).or_insert(Stage::Absence);
        *e = (*e).max(c.stage);
    }
    let diseased: Vec<&String> = truth.iter().filter(|(_, s)| s.is_present()).map(|(k, _)| k).collect();
    if diseased.is_empty() {
        return None;
    }
    let hits = diseased.iter().filter(|s| worst.get(s.as_str()).is_some_and(|st| st.is_present())).count();
    Some(hits as f64 / diseased.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn macro_f1_and_confusion() {
        let pred = [0, 1, 1, 2, 3, 3];
        let truth = [0, 1, 2, 2, 3, 0];
        let m = confusion_matrix(&pred, &truth, 4);
        assert_eq!(m[2], vec![0, 1, 1, 0]);
        let f = per_class_f1(&pred, &truth, 4);
        assert_eq!(f[1], Some(2.0 / 3.0));
        assert_eq!(f[0], Some(2.0 / 3.0));
        assert!((macro_f1(&pred, &truth, 4).unwrap() - (4.0 * 2.0 / 3.0) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn grouped_aucs_on_perfect_probs() {
        let probs = [[0.9, 0.05, 0.03, 0.02], [0.1, 0.7, 0.1, 0.1], [0.05, 0.05, 0.8, 0.1], [0.0, 0.1, 0.1, 0.8]];
        let truth = [Stage::Absence, Stage::II, Stage::III, Stage::IV];
        let r = staging_report(&probs, &truth, None);
        assert_eq!(r.macro_auc, Some(1.0));
        assert_eq!((r.presence_auc, r.pre_collapse_auc, r.post_collapse_auc), (Some(1.0), Some(1.0), Some(1.0)));
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.kappa_vs_truth.unwrap().kappa, 1.0);
    }

    #[test]
    fn two_views_never_lose_sensitivity() {
        let truth: BTreeMap<String, Stage> = [("a", Stage::II), ("b", Stage::III), ("c", Stage::Absence)]
            .iter()
            .map(|(k, s)| (k.to_string(), *s))
            .collect();
        let calls = vec![
            ViewCall { subject_id: "a".into(), view: View::AP, stage: Stage::II },
            ViewCall { subject_id: "a".into(), view: View::FL, stage: Stage::Absence },
            ViewCall { subject_id: "b".into(), view: View::FL, stage: Stage::IV },
        ];
        let both = subject_presence_sensitivity(&calls, &truth, &[View::AP, View::FL]).unwrap();
        let ap = subject_presence_sensitivity(&calls, &truth, &[View::AP]).unwrap();
        let fl = subject_presence_sensitivity(&calls, &truth, &[View::FL]).unwrap();
        assert_eq!((both, ap, fl), (1.0, 0.5, 0.5));
    }
}
