//! Diagnoses one synthetic subject (AP and frog-leg views) and writes the
//! annotated overlays and captions.
//!
//! ```text
//! cargo run -p avn-core --example diagnose -- runs/desk/models /tmp/diagnose
//! ```
//!
//! With `-` or no model directory the networks are randomly initialised, which
//! exercises the wiring but produces meaningless stages.

use std::path::PathBuf;

use avn_core::phantom::{generate_phantom, HeadSpec, PhantomSpec};
use avn_core::pipeline::{aggregate_subject, diagnose_boxes, render_report, render_subject_text, Models};
use avn_core::{Error, NoteClass, Side, Stage, View};

fn main() -> avn_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let (models, max_heads) = match args.next().filter(|a| a != "-") {
        Some(dir) => (Models::load_dir(&PathBuf::from(dir))?, usize::MAX),
        None => {
            let mut m = Models::untrained(7, 32, 0.0625)?;
            // untrained scores are flat, so keep only the two best boxes
            m.detector.inference.score_thresh = 0.0;
            (m, 2)
        }
    };
    let out = PathBuf::from(args.next().unwrap_or_else(|| "diagnose".into()));
    std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;

    let heads = vec![
        HeadSpec::new(Stage::III, vec![NoteClass::SubchondralFlatteningCollapse], Side::Right),
        HeadSpec::new(Stage::II, vec![NoteClass::ScleroticChange, NoteClass::CysticChange], Side::Left),
    ];
    let mut diagnoses = Vec::new();
    for view in View::ALL {
        let sample = generate_phantom(&PhantomSpec::new(heads.clone(), view, 42))?;
        let id = format!("S0042_{view:?}");
        let dets = models.detector.detect_fh(&sample.image)?;
        let boxes: Vec<_> = dets.iter().take(max_heads).map(|d| (d.bbox, d.score)).collect();
        let d = diagnose_boxes(&sample.image, &id, &models, &boxes)?;
        let (png, text) = render_report(&sample.image, &d.records)?;
        let path = out.join(format!("{id}.png"));
        std::fs::write(&path, png).map_err(|e| Error::Io { path, source: e })?;
        println!("{id}{}\n{text}", d.advisory.as_deref().map(|a| format!(" ({a})")).unwrap_or_default());
        diagnoses.push((view, d));
    }
    let records: Vec<_> = diagnoses.iter().flat_map(|(v, d)| d.records.iter().map(move |r| (*v, r))).collect();
    if !records.is_empty() {
        println!("{}", render_subject_text(&aggregate_subject("S0042", &records)?));
    }
    Ok(())
}
