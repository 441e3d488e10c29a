//! Reader-study statistics computed from stored readings only, so identical
//! journals give byte-identical reports for a fixed bootstrap seed.

use std::collections::{BTreeMap, BTreeSet};

use avn_core::evaluation::{bootstrap_ci, cohens_kappa, macro_f1, BootstrapCi, BootstrapConfig, KappaResult};
use avn_core::Stage;
use serde::{Deserialize, Serialize};

use crate::sessions::{Mode, Session};

/// Rater label of the reference standard in kappa tables.
pub const TRUTH_RATER: &str = "truth";
/// Rater label of the model in kappa tables.
pub const MODEL_RATER: &str = "model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: String,
    pub reader_id: String,
    pub mode: Mode,
    pub n_cases: usize,
    pub n_read: usize,
    /// False while readings are outstanding; all statistics then cover the read cases only.
    pub complete: bool,
    pub accuracy: Option<f64>,
    /// Macro F1 over the four stages against the reference standard.
    pub f1: Option<f64>,
    pub f1_ci: Option<BootstrapCi>,
    pub kappa_vs_truth: Option<KappaResult>,
    pub kappa_vs_model: Option<KappaResult>,
    /// Server-measured seconds per radiograph.
    pub mean_seconds: Option<f64>,
    pub mean_seconds_client: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaEntry {
    pub rater_a: String,
    pub rater_b: String,
    pub n_cases: usize,
    pub kappa: Option<KappaResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub n_cases: usize,
    pub f1: Option<f64>,
    pub f1_ci: Option<BootstrapCi>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub n_sessions: usize,
    pub mean_f1: Option<f64>,
    pub mean_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub complete: bool,
    pub bootstrap_seed: u64,
    pub bootstrap_resamples: usize,
    pub readers: Vec<SessionReport>,
    pub model: Option<ModelSummary>,
    /// Every pair among readers (by session id), the model and the truth, on their common cases.
    pub kappa: Vec<KappaEntry>,
    pub by_mode: Vec<ModeSummary>,
}

/// Reference and model stage per case; the model entry is absent when no
/// models are loaded.
pub trait CaseOracle {
    fn truth(&self, case_id: &str) -> Option<Stage>;
    fn model(&self, case_id: &str) -> Option<Stage>;
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Macro F1 with a bootstrap interval; the interval is `None` when undefined.
pub fn f1_with_ci(pred: &[Stage], truth: &[Stage], boot: &BootstrapConfig) -> (Option<f64>, Option<BootstrapCi>) {
    let p: Vec<usize> = pred.iter().map(|s| s.index()).collect();
    let t: Vec<usize> = truth.iter().map(|s| s.index()).collect();
    let point = macro_f1(&p, &t, Stage::COUNT);
    let ci = bootstrap_ci(
        p.len(),
        |idx| {
            let pp: Vec<usize> = idx.iter().map(|&i| p[i]).collect();
            let tt: Vec<usize> = idx.iter().map(|&i| t[i]).collect();
            macro_f1(&pp, &tt, Stage::COUNT)
        },
        boot,
    )
    .ok();
    (point, ci)
}

pub fn session_report(s: &Session, oracle: &dyn CaseOracle, boot: &BootstrapConfig) -> SessionReport {
    let read: Vec<_> = s.readings.iter().filter_map(|r| oracle.truth(&r.case_id).map(|t| (r, t))).collect();
    let pred: Vec<Stage> = read.iter().map(|(r, _)| r.stage).collect();
    let truth: Vec<Stage> = read.iter().map(|(_, t)| *t).collect();
    let (f1, f1_ci) = if read.is_empty() { (None, None) } else { f1_with_ci(&pred, &truth, boot) };
    let with_model: Vec<(Stage, Stage)> =
        read.iter().filter_map(|(r, _)| oracle.model(&r.case_id).map(|m| (r.stage, m))).collect();
    let kappa_vs_model = if with_model.len() == read.len() && !read.is_empty() {
        let (a, b): (Vec<Stage>, Vec<Stage>) = with_model.into_iter().unzip();
        cohens_kappa(&a, &b).ok()
    } else {
        None
    };
    SessionReport {
        session_id: s.session_id.clone(),
        reader_id: s.reader_id.clone(),
        mode: s.mode,
        n_cases: s.cases.len(),
        n_read: s.readings.len(),
        complete: s.is_complete(),
        accuracy: mean(pred.iter().zip(&truth).map(|(p, t)| f64::from(u8::from(p == t)))),
        f1,
        f1_ci,
        kappa_vs_truth: cohens_kappa(&pred, &truth).ok(),
        kappa_vs_model,
        mean_seconds: mean(s.readings.iter().map(|r| r.elapsed_server)),
        mean_seconds_client: mean(s.readings.iter().map(|r| r.elapsed)),
    }
}

/// Per-rater stage maps: each session by id, plus truth and model over every read case.
fn rater_maps(sessions: &[Session], oracle: &dyn CaseOracle) -> Vec<(String, BTreeMap<String, Stage>)> {
    let mut raters: Vec<(String, BTreeMap<String, Stage>)> = sessions
        .iter()
        .map(|s| (s.session_id.clone(), s.readings.iter().map(|r| (r.case_id.clone(), r.stage)).collect()))
        .collect();
    let cases: BTreeSet<String> = sessions.iter().flat_map(|s| s.readings.iter().map(|r| r.case_id.clone())).collect();
    let truth: BTreeMap<String, Stage> = cases.iter().filter_map(|c| oracle.truth(c).map(|t| (c.clone(), t))).collect();
    let model: BTreeMap<String, Stage> = cases.iter().filter_map(|c| oracle.model(c).map(|m| (c.clone(), m))).collect();
    if !model.is_empty() {
        raters.push((MODEL_RATER.to_string(), model));
    }
    raters.push((TRUTH_RATER.to_string(), truth));
    raters
}

pub fn study_report(sessions: &[Session], oracle: &dyn CaseOracle, boot: &BootstrapConfig) -> StudyReport {
    let readers: Vec<SessionReport> = sessions.iter().map(|s| session_report(s, oracle, boot)).collect();
    let raters = rater_maps(sessions, oracle);
    let mut kappa = Vec::new();
    for i in 0..raters.len() {
        for j in i + 1..raters.len() {
            let (a, b) = (&raters[i], &raters[j]);
            let common: Vec<(Stage, Stage)> =
                a.1.iter().filter_map(|(c, sa)| b.1.get(c).map(|sb| (*sa, *sb))).collect();
            let (x, y): (Vec<Stage>, Vec<Stage>) = common.iter().copied().unzip();
            kappa.push(KappaEntry {
                rater_a: a.0.clone(),
                rater_b: b.0.clone(),
                n_cases: common.len(),
                kappa: cohens_kappa(&x, &y).ok(),
            });
        }
    }
    let model = raters.iter().find(|r| r.0 == MODEL_RATER).map(|(_, m)| {
        let truth = &raters.last().expect("truth rater").1;
        let (p, t): (Vec<Stage>, Vec<Stage>) = m.iter().filter_map(|(c, s)| truth.get(c).map(|t| (*s, *t))).unzip();
        let (f1, f1_ci) = if p.is_empty() { (None, None) } else { f1_with_ci(&p, &t, boot) };
        ModelSummary { n_cases: p.len(), f1, f1_ci }
    });
    let by_mode = [Mode::Unassisted, Mode::Assisted]
        .into_iter()
        .map(|mode| {
            let rs: Vec<&SessionReport> = readers.iter().filter(|r| r.mode == mode).collect();
            ModeSummary {
                mode,
                n_sessions: rs.len(),
                mean_f1: mean(rs.iter().filter_map(|r| r.f1)),
                mean_seconds: mean(rs.iter().filter_map(|r| r.mean_seconds)),
            }
        })
        .collect();
    StudyReport {
        complete: readers.iter().all(|r| r.complete),
        bootstrap_seed: boot.seed,
        bootstrap_resamples: boot.n_resamples,
        readers,
        model,
        kappa,
        by_mode,
    }
}
