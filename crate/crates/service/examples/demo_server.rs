//! Serves a small reading-study library of phantom radiographs.
//!
//! ```text
//! cargo run -p avn-service --example demo_server -- 8080 runs/desk/models
//! curl localhost:8080/api/v1/health
//! curl -X POST localhost:8080/api/v1/sessions -H 'content-type: application/json' \
//!      -d '{"reader_id": "r1", "mode": "assisted"}'
//! ```
//!
//! Without a model directory, randomly initialised networks stand in so the
//! diagnose and assisted-session routes can be exercised end to end.

use std::path::PathBuf;

use avn_core::phantom::{generate_phantom, HeadSpec, PhantomSpec};
use avn_core::pipeline::Models;
use avn_core::{Side, Stage, View};
use avn_service::cases::{Case, CaseLibrary};
use avn_service::sessions::SessionStore;
use avn_service::{serve, AppState, ServiceConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let port: u16 = args.next().map(|p| p.parse()).transpose()?.unwrap_or(8080);
    let models = match args.next() {
        Some(dir) => Models::load_dir(&PathBuf::from(dir))?,
        None => {
            let mut m = Models::untrained(3, 32, 0.0625)?;
            m.detector.inference.score_thresh = 0.0;
            m
        }
    };

    let mut cases = Vec::new();
    for (i, stage) in
        [Stage::Absence, Stage::II, Stage::III, Stage::IV, Stage::II, Stage::Absence].into_iter().enumerate()
    {
        let heads = vec![HeadSpec::new(stage, vec![], Side::Left), HeadSpec::absence(Side::Right)];
        let view = if i % 2 == 0 { View::AP } else { View::FL };
        let sample = generate_phantom(&PhantomSpec::new(heads, view, 500 + i as u64).with_size(384))?;
        cases.push(Case { case_id: format!("case{i:02}"), image: sample.image, truth: stage });
    }

    let dir = tempfile::tempdir()?;
    let config = ServiceConfig {
        port,
        session_dir: dir.path().to_path_buf(),
        bootstrap_resamples: 1000,
        ..ServiceConfig::default()
    };
    let sessions = SessionStore::open(&config.session_dir)?;
    let state = AppState::new(Some(models), CaseLibrary::new(cases), sessions, config);
    println!("serving 6 cases on port {port}; journals in {}", dir.path().display());
    serve(state).await?;
    Ok(())
}
