//! Reader-study statistics on simulated readings: staging F1 with a bootstrap
//! interval, agreement with the reference, and a paired comparison between an
//! unaided and an assisted reader.

use avn_core::evaluation::{bootstrap_ci, bootstrap_compare, cohens_kappa, macro_f1, BootstrapConfig, CiMethod};
use avn_core::Stage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Copies the reference, replacing each stage with a random one at `error_rate`.
fn reader(truth: &[usize], error_rate: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    truth
        .iter()
        .map(|&t| if rng.random::<f64>() < error_rate { rng.random_range(0..Stage::COUNT) } else { t })
        .collect()
}

fn main() -> avn_core::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth: Vec<usize> = (0..120).map(|_| rng.random_range(0..Stage::COUNT)).collect();
    let unaided = reader(&truth, 0.35, &mut rng);
    let assisted = reader(&truth, 0.15, &mut rng);

    let f1_of = |pred: &[usize]| {
        let pred = pred.to_vec();
        let truth = truth.clone();
        move |idx: &[usize]| {
            let p: Vec<usize> = idx.iter().map(|&i| pred[i]).collect();
            let t: Vec<usize> = idx.iter().map(|&i| truth[i]).collect();
            macro_f1(&p, &t, Stage::COUNT)
        }
    };
    for (name, pred) in [("unaided", &unaided), ("assisted", &assisted)] {
        for method in [CiMethod::Basic, CiMethod::Percentile] {
            let cfg = BootstrapConfig { n_resamples: 2000, seed: 11, method, ..BootstrapConfig::default() };
            let ci = bootstrap_ci(truth.len(), f1_of(pred), &cfg)?;
            println!("{name:>8} F1 {:.3} [{:.3}, {:.3}] ({method:?})", ci.point, ci.lo, ci.hi);
        }
        let k = cohens_kappa(pred, &truth)?;
        println!("{name:>8} kappa vs reference {:.3} (observed {:.3}, chance {:.3})", k.kappa, k.observed, k.chance);
    }
    let cmp = bootstrap_compare(truth.len(), f1_of(&assisted), f1_of(&unaided), 2000, 11)?;
    println!(
        "assisted - unaided: mean {:+.3}, sd {:.3}, p = {:.2e}",
        cmp.mean_difference, cmp.sd_difference, cmp.p_value
    );
    println!("inter-reader kappa {:.3}", cohens_kappa(&unaided, &assisted)?.kappa);
    Ok(())
}
