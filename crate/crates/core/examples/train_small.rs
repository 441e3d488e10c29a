//! Generates a small phantom dataset, trains every network on it and scores
//! the held-out split. Takes a few minutes on one core.
//!
//! ```text
//! RUST_LOG=info cargo run --release -p avn-core --example train_small -- /tmp/train_small
//! ```

use std::path::PathBuf;

use avn_core::harness::{
    evaluate_bundle, holdout_split, key_metrics, load_images, prepare_data, train_bundle, ExperimentConfig,
};
use avn_core::phantom::SplitTag;

fn main() -> avn_core::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = ExperimentConfig::smoke();
    cfg.out_dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "train_small".into()));
    cfg.data.n_subjects = 80;
    cfg.data.n_test_subjects = 20;
    cfg.detector.max_epochs = 8;
    cfg.classifier.max_epochs = 6;

    let manifest = prepare_data(&cfg)?;
    let train = load_images(&manifest.split(SplitTag::Train))?;
    let test = load_images(&manifest.split(SplitTag::Test))?;
    let (fit, val) = holdout_split(&train, cfg.seed)?;
    let bundle = train_bundle(&cfg, &fit, &val, cfg.seed)?;
    for (task, log) in &bundle.logs {
        println!("{task}: {} epochs, best val loss {:.4}", log.epochs.len(), log.best_val_loss);
    }
    bundle.models.save_dir(&cfg.out_dir.join("models"))?;
    let report = evaluate_bundle(&bundle.models, &test, Some(&cfg.bootstrap))?;
    for (k, v) in key_metrics(&report) {
        println!("{k:<32} {v:.4}");
    }
    Ok(())
}
