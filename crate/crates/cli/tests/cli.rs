use avn_cli::{report, run, Cli};
use avn_core::harness::ExperimentConfig;
use avn_core::phantom::Manifest;
use clap::Parser;

fn cli(args: &[&str]) -> Cli {
    Cli::try_parse_from(std::iter::once("avn").chain(args.iter().copied())).unwrap()
}

#[test]
fn smoke_train_evaluate_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg_path = dir.path().join("custom.toml");
    std::fs::write(&cfg_path, "[data]\nn_subjects = 24\nn_test_subjects = 6\nimage_size = 320\n[detector]\nmax_epochs = 1\n[classifier]\nmax_epochs = 1\nwidth_mult = 0.0625\n").unwrap();
    let cfg_arg = cfg_path.to_str().unwrap();

    run(cli(&["--config", cfg_arg, "--seed", "3", "--out", out, "generate"])).unwrap();
    let resolved = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!((resolved.seed, resolved.data.n_subjects, resolved.out_dir.as_path()), (3, 24, dir.path()));
    let m = Manifest::read(&dir.path().join("data/manifest.jsonl")).unwrap();
    assert_eq!(m.subjects().len(), 24);

    run(cli(&["--config", cfg_arg, "--seed", "3", "--out", out, "train"])).unwrap();
    for f in ["detector.ckpt", "side.ckpt", "view.ckpt", "stage.ckpt", "notes.ckpt", "pipeline.json"] {
        assert!(dir.path().join("models").join(f).exists(), "missing {f}");
    }
    run(cli(&["--config", cfg_arg, "--seed", "3", "--out", out, "evaluate", "--overlays", "2"])).unwrap();
    let eval: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("eval/report.json")).unwrap()).unwrap();
    assert!(eval["staging"]["per_class"].is_array());
    let csv = std::fs::read_to_string(dir.path().join("eval/roc_stage.csv")).unwrap();
    assert!(csv.starts_with("stage,threshold,fpr,tpr"));

    let md = report(dir.path()).unwrap();
    assert!(md.contains("Training") || md.contains("training"), "{md}");
    assert!(dir.path().join("report.md").exists());
}

#[test]
fn bad_profile_and_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert!(run(cli(&["--profile", "huge", "--out", out, "report"])).is_err());
    assert!(Cli::try_parse_from(["avn", "fly"]).is_err());
    assert!(report(dir.path()).is_err() || !report(dir.path()).unwrap().contains("|"));
}
