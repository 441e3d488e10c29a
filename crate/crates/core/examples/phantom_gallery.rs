//! Renders one radiograph per stage and view plus close-up crops of each head.
//!
//! ```text
//! cargo run -p avn-core --example phantom_gallery -- /tmp/gallery 0.3
//! ```

use std::path::PathBuf;

use avn_core::phantom::{generate_phantom, HeadSpec, PhantomSpec};
use avn_core::{NoteClass, Side, Stage, View};

fn main() -> avn_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "gallery".into()));
    let noise: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.3);
    std::fs::create_dir_all(&out).map_err(|e| avn_core::Error::Io { path: out.clone(), source: e })?;

    let cases = [
        (Stage::Absence, vec![]),
        (Stage::II, vec![NoteClass::ScleroticChange, NoteClass::CysticChange]),
        (Stage::II, vec![NoteClass::CrescentSignNoFlattening]),
        (Stage::III, vec![NoteClass::SubchondralFlatteningCollapse]),
        (Stage::III, vec![NoteClass::FhDeformation]),
        (Stage::IV, vec![NoteClass::FhAndAcetabularDeformation]),
        (Stage::IV, vec![NoteClass::JointSpaceStenosis]),
    ];
    for (i, (stage, notes)) in cases.into_iter().enumerate() {
        for view in View::ALL {
            let heads = vec![HeadSpec::new(stage, notes.clone(), Side::Right), HeadSpec::absence(Side::Left)];
            let spec = PhantomSpec::new(heads, view, 100 + i as u64).with_noise(noise);
            let sample = generate_phantom(&spec)?;
            let name = format!("{i}_{stage}_{view:?}");
            sample.image.save_png(out.join(format!("{name}.png")))?;
            for (h, truth) in sample.ground_truth.iter().enumerate() {
                let crop = sample.image.crop_resize(truth.bbox.as_array(), 128, 128);
                crop.save_png(out.join(format!("{name}_head{h}.png")))?;
            }
            println!("{name}: {:?}", sample.ground_truth.iter().map(|t| t.stage).collect::<Vec<_>>());
        }
    }
    Ok(())
}
