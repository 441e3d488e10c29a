//! Scores a simulated detector against phantom ground truth: non-maximum
//! suppression, precision/recall/F1 over an IoU grid and the automatically
//! selected threshold.

use avn_core::detection::{nms, BBox, Detection};
use avn_core::evaluation::{auto_iou_threshold, default_iou_grid, detection_prf, IouRule};
use avn_core::phantom::{generate_phantom, HeadSpec, PhantomSpec};
use avn_core::{Side, Stage, View};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> avn_core::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut preds, mut gts) = (Vec::new(), Vec::new());
    for seed in 0..40 {
        let heads = vec![HeadSpec::new(Stage::II, vec![], Side::Right), HeadSpec::absence(Side::Left)];
        let view = if seed % 2 == 0 { View::AP } else { View::FL };
        let sample = generate_phantom(&PhantomSpec::new(heads, view, seed).with_size(256))?;
        let truth: Vec<BBox> = sample.ground_truth.iter().map(|t| t.bbox).collect();
        // a cloud of jittered candidates per head, as a raw detector would emit
        let mut cands = Vec::new();
        for g in &truth {
            for _ in 0..6 {
                let (cx, cy) = g.center();
                let j = |s: f64, rng: &mut ChaCha8Rng| rng.random_range(-s..s);
                let w = g.width() * (1.0 + j(0.15, &mut rng));
                let b = BBox::from_center(cx + j(4.0, &mut rng), cy + j(4.0, &mut rng), w, w)?;
                cands.push(Detection { bbox: b, score: rng.random_range(0.3..1.0) });
            }
        }
        let kept = nms(&cands, 0.45, 0.5);
        preds.push(kept.iter().map(|d| d.bbox).collect::<Vec<_>>());
        gts.push(truth);
    }
    println!("{:>5} {:>9} {:>7} {:>7}", "IoU", "precision", "recall", "F1");
    for t in [0.5, 0.6, 0.7, 0.8] {
        let r = detection_prf(&preds, &gts, t, IouRule::Strict);
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!("{t:>5.2} {:>9} {:>7} {:>7.4}", fmt(r.precision), fmt(r.recall), r.f1);
    }
    match auto_iou_threshold(&preds, &gts, &default_iou_grid(), IouRule::Strict) {
        Ok(t) => println!("highest IoU threshold with precision 1: {t:.2}"),
        Err(e) => println!("no threshold reaches precision 1: {e}"),
    }
    Ok(())
}
