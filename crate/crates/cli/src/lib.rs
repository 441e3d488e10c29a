//! `avn` subcommands. Every command resolves one [`ExperimentConfig`] from a
//! profile or TOML file, then applies `--seed` and `--out`.
//!
//! Output layout under `--out`:
//!
//! ```text
//! config.toml            resolved configuration
//! data/manifest.jsonl    generated phantoms (unless data.manifest is set)
//! models/                detector.ckpt, {side,view,stage,notes}.ckpt, pipeline.json
//! logs/{task}.json       per-epoch training logs
//! eval/report.json       held-out metrics; roc_stage.csv; overlays/{id}.png|txt
//! cv/repNN/foldNN/       per-fold report.json and logs.json
//! experiment.json        repeated cross-validation summary
//! ablation.json          resampling ablation
//! report.md              summary of whichever of the above exist
//! sessions/              reader-study journals written by `serve`
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use avn_core::detection::Detector;
use avn_core::harness::{
    evaluate_predictions, holdout_split, load_images, predict_images, prepare_data, roc_csv, run_ablation,
    run_experiment, stage_roc_curves, train_bundle, train_detector, write_overlays, AblationReport, EvalReport,
    ExperimentConfig, ExperimentReport, LoadedImage, Task, TrainLog,
};
use avn_core::phantom::{Manifest, SplitTag};
use avn_core::pipeline::{Models, DETECTOR_FILE};
use avn_service::{AppState, ServiceConfig};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "avn", version, about = "Femoral-head detection and AVNFH staging on synthetic radiographs")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration; missing keys take the profile defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in profile used when no --config is given: desk, full or smoke.
    #[arg(long, global = true, default_value = "desk")]
    pub profile: String,
    /// Overrides the configuration's master seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the phantom dataset and write its manifest.
    Generate,
    /// Train detector and classifiers on the training split.
    Train,
    /// Score trained models on the test split, or run repeated cross-validation.
    Evaluate {
        /// Model directory; defaults to `{out}/models`.
        #[arg(long)]
        models: Option<PathBuf>,
        /// Run R x k cross-validation on the training split instead.
        #[arg(long)]
        cv: bool,
        /// Number of test images to render as overlays.
        #[arg(long, default_value_t = 8)]
        overlays: usize,
    },
    /// Compare resampling counts and the raw-ROI baseline.
    Ablate {
        /// Reuse `detector.ckpt` from this directory instead of training one.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Serve the diagnosis API and the reader-study backend.
    Serve {
        /// Model directory; defaults to AVN_MODEL_DIR, then `{out}/models` when present
        #[arg(long)]
        models: Option<PathBuf>,
        /// Manifest whose images become reading cases.
        #[arg(long)]
        cases: Option<PathBuf>,
        /// Listening port; defaults to AVN_PORT or 8080
        #[arg(long)]
        port: Option<u16>,
        /// Static files for the review UI.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Summarise every result file under `--out` into `report.md`.
    Report,
}

impl Common {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load_over(&ExperimentConfig::profile(&self.profile)?, p)
                .with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::profile(&self.profile)?,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = cli.common.resolve()?;
    std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    std::fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml()?)?;
    match cli.command {
        Command::Generate => generate(&cfg).map(|_| ()),
        Command::Train => train(&cfg).map(|_| ()),
        Command::Evaluate { models, cv: true, .. } => {
            if models.is_some() {
                bail!("--cv trains its own models; drop --models");
            }
            cross_validate(&cfg).map(|_| ())
        }
        Command::Evaluate { models, overlays, .. } => evaluate(&cfg, &model_dir(&cfg, models), overlays).map(|_| ()),
        Command::Ablate { models } => ablate(&cfg, models.as_deref()).map(|_| ()),
        Command::Serve { models, cases, port, ui } => serve(&cfg, models, cases, port, ui),
        Command::Report => report(&cfg.out_dir).map(|text| print!("{text}")),
    }
}

fn model_dir(cfg: &ExperimentConfig, models: Option<PathBuf>) -> PathBuf {
    models.unwrap_or_else(|| cfg.out_dir.join("models"))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(v)?).with_context(|| format!("writing {}", path.display()))
}

fn split(cfg: &ExperimentConfig) -> Result<(Vec<LoadedImage>, Vec<LoadedImage>)> {
    let m = prepare_data(cfg)?;
    Ok((load_images(&m.split(SplitTag::Train))?, load_images(&m.split(SplitTag::Test))?))
}

pub fn generate(cfg: &ExperimentConfig) -> Result<Manifest> {
    let m = prepare_data(cfg)?;
    log::info!(
        "{} images of {} subjects ({} train / {} test images)",
        m.records.len(),
        m.subjects().len(),
        m.split(SplitTag::Train).records.len(),
        m.split(SplitTag::Test).records.len()
    );
    Ok(m)
}

/// Trains on the training split with a 9:1 subject hold-out for validation.
pub fn train(cfg: &ExperimentConfig) -> Result<Models> {
    let (train, _) = split(cfg)?;
    let (fit, val) = holdout_split(&train, cfg.seed)?;
    log::info!("training on {} images, validating on {}", fit.len(), val.len());
    let bundle = train_bundle(cfg, &fit, &val, cfg.seed)?;
    bundle.models.save_dir(&cfg.out_dir.join("models"))?;
    for (task, log) in &bundle.logs {
        write_json(&cfg.out_dir.join("logs").join(format!("{task}.json")), log)?;
    }
    Ok(bundle.models)
}

pub fn evaluate(cfg: &ExperimentConfig, models_dir: &Path, n_overlays: usize) -> Result<EvalReport> {
    let models =
        Models::load_dir(models_dir).with_context(|| format!("loading models from {}", models_dir.display()))?;
    let (_, test) = split(cfg)?;
    let preds = predict_images(&models, &test)?;
    let report = evaluate_predictions(&test, &preds, Some(&cfg.bootstrap), models.config.note_tau);
    let dir = cfg.out_dir.join("eval");
    write_json(&dir.join("report.json"), &report)?;
    std::fs::write(dir.join("roc_stage.csv"), roc_csv(&stage_roc_curves(&test, &preds))?)?;
    write_overlays(&models, &test[..n_overlays.min(test.len())], &dir.join("overlays"))?;
    log::info!("detection F1@0.5 {:.4}, staging macro-AUC {:?}", report.detection.at_half.f1, report.staging.macro_auc);
    Ok(report)
}

pub fn cross_validate(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    Ok(run_experiment(cfg)?)
}

pub fn ablate(cfg: &ExperimentConfig, models_dir: Option<&Path>) -> Result<AblationReport> {
    let (train, test) = split(cfg)?;
    let detector = match models_dir {
        Some(d) => Detector::load(&d.join(DETECTOR_FILE))?,
        None => {
            let (fit, val) = holdout_split(&train, cfg.seed)?;
            let tcfg = cfg.detector.for_task(Task::Detector, avn_core::harness::task_seed(cfg.seed, Task::Detector));
            let (det, log) = train_detector(&tcfg, &fit, &val)?;
            write_json(&cfg.out_dir.join("logs").join("ablation_detector.json"), &log)?;
            det
        }
    };
    let report = run_ablation(cfg, &train, &test, &detector)?;
    write_json(&cfg.out_dir.join("ablation.json"), &report)?;
    Ok(report)
}

fn serve(
    cfg: &ExperimentConfig,
    models: Option<PathBuf>,
    cases: Option<PathBuf>,
    port: Option<u16>,
    ui: Option<PathBuf>,
) -> Result<()> {
    let mut sc = ServiceConfig::from_env().map_err(anyhow::Error::msg)?;
    if std::env::var_os("AVN_SESSION_DIR").is_none() {
        sc.session_dir = cfg.out_dir.join("sessions");
    }
    if let Some(m) = models {
        sc.model_dir = Some(m);
    } else if sc.model_dir.is_none() {
        let d = model_dir(cfg, None);
        sc.model_dir = d.join(DETECTOR_FILE).exists().then_some(d);
    }
    if let Some(c) = cases {
        sc.cases_manifest = Some(c);
    }
    if let Some(p) = port {
        sc.port = p;
    }
    if let Some(u) = ui {
        sc.ui_dir = Some(u);
    }
    let state = AppState::from_config(sc).map_err(anyhow::Error::msg)?;
    tokio::runtime::Runtime::new()?.block_on(avn_service::serve(state))?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    let bytes = std::fs::read(path)?;
    Ok(Some(serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

/// Markdown summary of the result files present under `out`.
pub fn report(out: &Path) -> Result<String> {
    let mut s = String::from("# AVNFH results\n\n");
    let mut any = false;
    let mut logs: BTreeMap<String, TrainLog> = BTreeMap::new();
    if let Ok(rd) = std::fs::read_dir(out.join("logs")) {
        for e in rd.flatten() {
            let p = e.path();
            if let (Some(stem), Some(log)) =
                (p.file_stem().map(|x| x.to_string_lossy().into_owned()), read_json::<TrainLog>(&p)?)
            {
                logs.insert(stem, log);
            }
        }
    }
    if !logs.is_empty() {
        any = true;
        s.push_str("## Training\n\n| task | epochs | best epoch | best val loss | first train loss | last train loss |\n|---|---|---|---|---|---|\n");
        for (task, l) in &logs {
            let _ = writeln!(
                s,
                "| {task} | {} | {} | {:.4} | {:.4} | {:.4} |",
                l.epochs.len(),
                l.best_epoch,
                l.best_val_loss,
                l.initial_train_loss,
                l.final_train_loss()
            );
        }
        s.push('\n');
    }
    if let Some(r) = read_json::<EvalReport>(&out.join("eval").join("report.json"))? {
        any = true;
        let _ = writeln!(
            s,
            "## Held-out test set\n\n{} images, {} heads ({} missed by detection)\n",
            r.n_images, r.n_heads, r.n_missed_heads
        );
        s.push_str("| metric | value |\n|---|---|\n");
        let _ = writeln!(s, "| detection F1 @ IoU 0.5 | {:.4} |", r.detection.at_half.f1);
        let _ = writeln!(s, "| auto IoU threshold | {} |", opt(r.detection.auto_threshold));
        let _ = writeln!(s, "| staging macro-AUC | {} |", opt(r.staging.macro_auc));
        let _ = writeln!(s, "| staging macro-F1 | {} |", opt(r.staging.macro_f1));
        if let Some(ci) = &r.staging.macro_f1_ci {
            let _ = writeln!(s, "| staging macro-F1 95% CI | {:.4} to {:.4} |", ci.lo, ci.hi);
        }
        let _ = writeln!(s, "| staging accuracy | {:.4} |", r.staging.accuracy);
        let _ = writeln!(s, "| side accuracy | {} |", opt((r.side.n > 0).then_some(r.side.accuracy)));
        let _ = writeln!(s, "| view accuracy | {} |", opt((r.view.n > 0).then_some(r.view.accuracy)));
        let ss = &r.subject_sensitivity;
        let _ = writeln!(
            s,
            "| subject sensitivity AP / FL / both | {} / {} / {} |\n",
            opt(ss.ap),
            opt(ss.fl),
            opt(ss.both)
        );
    }
    if let Some(r) = read_json::<ExperimentReport>(&out.join("experiment.json"))? {
        any = true;
        let _ = writeln!(s, "## Cross-validation ({} x {}-fold)\n\nCI: {}\n", r.repetitions, r.folds, r.ci_formula);
        s.push_str("| metric | mean | sd | 95% CI |\n|---|---|---|---|\n");
        for (k, m) in &r.summary {
            let _ = writeln!(s, "| {k} | {:.4} | {:.4} | {:.4} to {:.4} |", m.mean, m.sd, m.ci_lo, m.ci_hi);
        }
        s.push('\n');
    }
    if let Some(r) = read_json::<AblationReport>(&out.join("ablation.json"))? {
        any = true;
        let _ = writeln!(s, "## Resampling ablation ({} test heads)\n", r.n_test_heads);
        s.push_str("| cell | median F1 | mean F1 | CI | per seed |\n|---|---|---|---|---|\n");
        for c in &r.cells {
            let seeds: Vec<String> = c.per_seed_f1.iter().map(|f| format!("{f:.4}")).collect();
            let _ = writeln!(
                s,
                "| {} | {:.4} | {:.4} | {:.4} to {:.4} | {} |",
                c.label,
                c.median_f1,
                c.mean_f1,
                c.ci_lo,
                c.ci_hi,
                seeds.join(", ")
            );
        }
        s.push('\n');
    }
    if !any {
        bail!("no result files under {}", out.display());
    }
    std::fs::write(out.join("report.md"), &s)?;
    Ok(s)
}
