//! Hand-crafted pixel statistics that read the stage signature straight off a
//! rendered head. Used to check that the phantom task is learnable.

use super::render::HeadGeometry;
use crate::imaging::ImageF32;

pub const PROBE_DIM: usize = 7;

/// `[rim, cyst, crescent, dome edge, joint gap, contour spread, roof spread]`.
pub type ProbeFeatures = [f64; PROBE_DIM];

fn at(img: &ImageF32, g: &HeadGeometry, rho: f64, a: f64) -> f64 {
    img.sample(g.cx + rho * a.sin(), g.cy - rho * a.cos()) as f64
}

fn polar_mean(img: &ImageF32, g: &HeadGeometry, rho: (f64, f64), half_deg: f64) -> Vec<f64> {
    let r = g.radius;
    let mut out = Vec::new();
    let n_rho = ((rho.1 - rho.0) * r).ceil().max(2.0) as usize;
    for ai in -(half_deg as i32)..=(half_deg as i32) {
        let a = (ai as f64).to_radians();
        for k in 0..=n_rho {
            let p = rho.0 + (rho.1 - rho.0) * k as f64 / n_rho as f64;
            out.push(at(img, g, p * r, a));
        }
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

/// Head edge and acetabular roof radii (both over `r`) along angle `a`, found
/// around the darkest point of the joint space.
fn ray_edges(img: &ImageF32, g: &HeadGeometry, a: f64) -> (f64, f64) {
    let r = g.radius;
    let steps: Vec<f64> = (0..=95).map(|i| 0.5 + 0.01 * i as f64).collect();
    let prof: Vec<f64> = steps
        .iter()
        .map(|&p| {
            let da = 1.5f64.to_radians();
            (at(img, g, p * r, a - da) + at(img, g, p * r, a) + at(img, g, p * r, a + da)) / 3.0
        })
        .collect();
    let lo = steps.iter().position(|&p| p >= 0.75).unwrap_or(0);
    let hi = steps.iter().position(|&p| p >= 1.3).unwrap_or(steps.len() - 1);
    let mut m = lo;
    for i in lo..=hi {
        if prof[i] < prof[m] {
            m = i;
        }
    }
    let inner_peak = prof[..=m].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let outer_peak = prof[m..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let t_in = (prof[m] + inner_peak) / 2.0;
    let t_out = (prof[m] + outer_peak) / 2.0;
    let mut edge = steps[0];
    for i in (0..=m).rev() {
        if prof[i] > t_in {
            edge = steps[i];
            break;
        }
    }
    let mut roof = steps[steps.len() - 1];
    for i in m..prof.len() {
        if prof[i] > t_out {
            roof = steps[i];
            break;
        }
    }
    (edge, roof)
}

/// Stage-sensitive pixel statistics for the head at `g`.
pub fn probe_features(img: &ImageF32, g: &HeadGeometry) -> ProbeFeatures {
    let r = g.radius;
    let lat = g.lateral();
    // medial-inferior core: away from lesions and the frog-leg trochanter
    let mut base = Vec::new();
    let step = (r / 12.0).max(1.0);
    let mut dy = 0.1 * r;
    while dy < 0.5 * r {
        let mut dx = -0.5 * r;
        while dx < 0.5 * r {
            if dx * lat < 0.0 && dx * dx + dy * dy < 0.25 * r * r {
                base.push(img.sample(g.cx + dx, g.cy + dy) as f64);
            }
            dx += step;
        }
        dy += step;
    }
    let b = mean(&base);
    let rim = mean(&polar_mean(img, g, (0.64, 0.84), 55.0)) - b;
    let core = polar_mean(img, g, (0.15, 0.62), 60.0);
    let cyst = core.iter().filter(|&&v| v < b - 0.12).count() as f64 / core.len() as f64;
    let crescent = mean(&polar_mean(img, g, (0.885, 0.935), 40.0)) - b;

    let mut top = Vec::new();
    let mut gaps = Vec::new();
    let mut edges = Vec::new();
    let mut roofs = Vec::new();
    for ai in (-75i32..=75).step_by(5) {
        let a = (ai as f64).to_radians();
        let (e, f) = ray_edges(img, g, a);
        if ai.abs() <= 30 {
            top.push(e);
        }
        if ai.abs() <= 60 {
            gaps.push(f - e);
        }
        edges.push(e);
        roofs.push(f);
    }
    [rim, cyst, crescent, mean(&top), mean(&gaps), std(&edges), std(&roofs)]
}
