//! Procedural renderer for pelvic-radiograph phantoms.
//!
//! Coordinates are continuous pixels with pixel `(i, j)` centred at
//! `(i + 0.5, j + 0.5)`; `y` grows downwards, so "superior" is `-y`. The
//! patient's right hip is drawn on the image's left.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::spec::{HeadSpec, HeadTruth, PhantomSpec};
use crate::classification::labels::{NoteClass, Side, Stage, View};
use crate::detection::BBox;
use crate::error::Result;
use crate::imaging::ImageF32;

/// Ground-truth box half-side as a multiple of the head radius; the box covers
/// the joint space and the acetabular roof.
pub const BOX_MARGIN: f64 = 1.15;
/// Head radius range as a fraction of the image side.
pub const RADIUS_RANGE: (f64, f64) = (0.061, 0.078);

/// Rendered head placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadGeometry {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub side: Side,
}

impl HeadGeometry {
    /// `-1` when lateral points to the image's left (patient's right hip).
    pub fn lateral(&self) -> f64 {
        match self.side {
            Side::Right => -1.0,
            Side::Left => 1.0,
        }
    }

    pub fn bbox(&self) -> BBox {
        let h = BOX_MARGIN * self.radius;
        BBox { x_min: self.cx - h, y_min: self.cy - h, x_max: self.cx + h, y_max: self.cy + h }
    }
}

/// One rendered radiograph with exact ground truth.
#[derive(Debug, Clone)]
pub struct PhantomSample {
    pub image: ImageF32,
    pub ground_truth: Vec<HeadTruth>,
    pub view: View,
    pub subject_id: String,
    pub typical: bool,
    pub geometry: Vec<HeadGeometry>,
    /// Row-major flag per pixel, set where a lesion altered the rendering.
    pub lesion_mask: Vec<bool>,
}

impl PhantomSample {
    pub fn lesion_pixels_in(&self, b: &BBox) -> usize {
        let w = self.image.width();
        let (x0, y0) = (b.x_min.max(0.0) as usize, b.y_min.max(0.0) as usize);
        let x1 = (b.x_max.ceil() as usize).min(w);
        let y1 = (b.y_max.ceil() as usize).min(self.image.height());
        (y0..y1).map(|y| (x0..x1).filter(|&x| self.lesion_mask[y * w + x]).count()).sum()
    }
}

/// Notes actually drawn: an empty note set on a diseased head falls back to
/// that stage's signature finding.
pub fn effective_notes(head: &HeadSpec) -> Vec<NoteClass> {
    if !head.notes.is_empty() || head.stage == Stage::Absence {
        return head.notes.clone();
    }
    match head.stage {
        Stage::II => vec![NoteClass::ScleroticChange],
        Stage::III => vec![NoteClass::SubchondralFlatteningCollapse],
        Stage::IV => vec![NoteClass::FhAndAcetabularDeformation, NoteClass::JointSpaceStenosis],
        Stage::Absence => Vec::new(),
    }
}

/// Lesion contrast multiplier; the inter-stage gap shrinks as noise rises.
pub fn lesion_contrast(noise_level: f64) -> f64 {
    1.0 - 0.5 * noise_level
}

/// Pixel noise standard deviation.
pub fn noise_sigma(noise_level: f64) -> f64 {
    0.12 * noise_level
}

#[derive(Debug, Clone, Default)]
struct Lesions {
    /// Depth of the flattened dome as a fraction of the radius.
    flatten: f64,
    deform_amp: f64,
    deform_phase: f64,
    sclerotic: bool,
    /// Local `(x, y, radius)` of cysts.
    cysts: Vec<(f64, f64, f64)>,
    crescent: bool,
    /// Joint-space width as a fraction of the radius.
    gap: f64,
    /// Joint-space width before any narrowing.
    base_gap: f64,
    /// Acetabular roof follows the (deformed) head contour.
    remodelled: bool,
    acet_amp: f64,
    acet_phase: f64,
}

impl Lesions {
    fn any(&self) -> bool {
        self.flatten > 0.0
            || self.deform_amp > 0.0
            || self.sclerotic
            || !self.cysts.is_empty()
            || self.crescent
            || self.remodelled
            || self.acet_amp > 0.0
    }
}

const NORMAL_GAP: (f64, f64) = (0.12, 0.16);

fn draw_lesions(head: &HeadSpec, k: f64, r: f64, rng: &mut ChaCha8Rng) -> Lesions {
    let base_gap = rng.random_range(NORMAL_GAP.0..NORMAL_GAP.1);
    let mut l = Lesions { gap: base_gap, base_gap, ..Default::default() };
    // geometric findings soften less than intensity ones
    let g = 0.6 + 0.4 * k;
    let notes = effective_notes(head);
    if head.stage == Stage::IV {
        l.flatten = rng.random_range(0.15..0.21) * g;
        l.deform_amp = rng.random_range(0.05..0.07) * g;
        l.deform_phase = rng.random_range(0.0..2.0 * PI);
        l.remodelled = true;
    }
    for n in notes {
        match n {
            NoteClass::ScleroticChange => l.sclerotic = true,
            NoteClass::CysticChange => {
                let count = rng.random_range(3..=5);
                for _ in 0..count {
                    let a = rng.random_range(-55f64..55.0).to_radians();
                    let rho = rng.random_range(0.22..0.58) * r;
                    let rad = rng.random_range(0.09..0.13) * r;
                    l.cysts.push((rho * a.sin(), -rho * a.cos(), rad));
                }
            }
            NoteClass::CrescentSignNoFlattening => l.crescent = true,
            NoteClass::SubchondralFlatteningCollapse => l.flatten = rng.random_range(0.17..0.24) * g,
            NoteClass::FhDeformation => {
                l.deform_amp = rng.random_range(0.09..0.12) * g;
                l.deform_phase = rng.random_range(0.0..2.0 * PI);
            }
            NoteClass::FhAndAcetabularDeformation => {
                l.deform_amp += 0.04 * g;
                l.acet_amp = rng.random_range(0.12..0.16) * g;
                l.acet_phase = rng.random_range(0.0..2.0 * PI);
            }
            NoteClass::JointSpaceStenosis => l.gap = rng.random_range(0.02..0.04),
        }
    }
    l
}

#[derive(Debug, Clone)]
struct Femur {
    neck_dir: (f64, f64),
    neck_len: f64,
    neck_hw: f64,
    shaft_start: (f64, f64),
    shaft_dir: (f64, f64),
    shaft_hw: f64,
    /// Greater trochanter: centre and radii; `overlay` adds over the head.
    troch: (f64, f64, f64, f64),
    overlay: bool,
    lesser: (f64, f64, f64, f64),
}

fn unit(a: f64) -> (f64, f64) {
    (a.cos(), a.sin())
}

fn draw_femur(view: View, geo: &HeadGeometry, rng: &mut ChaCha8Rng) -> Femur {
    let (cx, cy, r, lat) = (geo.cx, geo.cy, geo.radius, geo.lateral());
    match view {
        View::AP => {
            let theta = rng.random_range(35f64..45.0).to_radians();
            let (dx, dy) = unit(theta);
            let neck_dir = (lat * dx, dy);
            let neck_len = 1.75 * r;
            let tip = (cx + neck_dir.0 * neck_len, cy + neck_dir.1 * neck_len);
            let shaft_start = (cx + neck_dir.0 * 1.6 * r, cy + neck_dir.1 * 1.6 * r + 0.3 * r);
            let s = (-lat * 0.06, 1.0);
            let n = (s.0 * s.0 + s.1 * s.1).sqrt();
            Femur {
                neck_dir,
                neck_len,
                neck_hw: 0.36 * r,
                shaft_start,
                shaft_dir: (s.0 / n, s.1 / n),
                shaft_hw: 0.46 * r,
                troch: (tip.0 + lat * 0.25 * r, tip.1 - 0.35 * r, 0.5 * r, 0.5 * r),
                overlay: false,
                lesser: (shaft_start.0 - lat * 0.45 * r, shaft_start.1 + 1.0 * r, 0.22 * r, 0.3 * r),
            }
        }
        View::FL => {
            let theta = rng.random_range(8f64..16.0).to_radians();
            let (dx, dy) = unit(theta);
            let neck_dir = (lat * dx, dy);
            let neck_len = 1.25 * r;
            let (sx, sy) = unit(55f64.to_radians());
            Femur {
                neck_dir,
                neck_len,
                neck_hw: 0.38 * r,
                shaft_start: (cx + neck_dir.0 * 1.2 * r, cy + neck_dir.1 * 1.2 * r),
                shaft_dir: (lat * sx, sy),
                shaft_hw: 0.46 * r,
                troch: (cx + lat * 0.6 * r, cy + 0.6 * r, 0.65 * r, 0.5 * r),
                overlay: true,
                lesser: (cx - lat * 0.2 * r, cy + 1.35 * r, 0.25 * r, 0.25 * r),
            }
        }
    }
}

/// Soft coverage of a signed distance (positive inside) over `width` pixels.
fn ramp(sd: f64, width: f64) -> f64 {
    (sd / width + 0.5).clamp(0.0, 1.0)
}

fn ellipse_sd(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> f64 {
    let q = (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt();
    (1.0 - q) * rx.min(ry)
}

fn band_sd(x: f64, y: f64, start: (f64, f64), dir: (f64, f64), len: f64, hw: f64) -> f64 {
    let (px, py) = (x - start.0, y - start.1);
    let t = px * dir.0 + py * dir.1;
    let u = (-px * dir.1 + py * dir.0).abs();
    t.min(len - t).min(hw - u)
}

/// Angle from the superior direction in `(-pi, pi]`, positive towards image right.
fn from_superior(dx: f64, dy: f64) -> f64 {
    dx.atan2(-dy)
}

fn angular_window(a: f64, half: f64, soft: f64) -> f64 {
    ((half - a.abs()) / soft).clamp(0.0, 1.0)
}

struct HeadScene {
    geo: HeadGeometry,
    femur: Femur,
    lesions: Lesions,
    k: f64,
}

impl HeadScene {
    /// Contour radius of the undeflattened, possibly deformed head along angle `a`.
    fn contour(&self, a: f64) -> f64 {
        let l = &self.lesions;
        self.geo.radius * (1.0 + l.deform_amp * (3.0 * a + l.deform_phase).sin())
    }

    /// Distance from the centre to the head edge along angle `a`.
    fn edge(&self, a: f64) -> f64 {
        let mut e = self.contour(a);
        if self.lesions.flatten > 0.0 && a.cos() > 1e-9 {
            let chord = (1.0 - self.lesions.flatten) * self.geo.radius;
            e = e.min(chord / a.cos());
        }
        e
    }

    /// Head coverage and whether the pixel differs from the intact head.
    fn head_cov(&self, dx: f64, dy: f64) -> (f64, f64) {
        let d = (dx * dx + dy * dy).sqrt();
        let a = from_superior(dx, dy);
        let intact = ramp(self.geo.radius - d, 1.0);
        let mut cov = ramp(self.contour(a) - d, 1.0);
        if self.lesions.flatten > 0.0 {
            let chord = (1.0 - self.lesions.flatten) * self.geo.radius;
            cov = cov.min(ramp(dy + chord, 1.0));
        }
        (cov, intact)
    }

    fn acetabulum(&self, dx: f64, dy: f64, deformed: bool) -> f64 {
        let r = self.geo.radius;
        let d = (dx * dx + dy * dy).sqrt();
        let a = from_superior(dx, dy);
        let window = angular_window(a, 80f64.to_radians(), 10f64.to_radians());
        if window == 0.0 {
            return 0.0;
        }
        let l = &self.lesions;
        let (inner, thick) = if deformed {
            let base = if l.remodelled { self.edge(a) } else { r };
            let wave = l.acet_amp * r * (2.5 * a + l.acet_phase).sin();
            let thick = 0.16 * r * (1.0 + 0.6 * (l.acet_amp / 0.14) * (4.0 * a + 1.3 * l.acet_phase).sin());
            (base + l.gap * r + wave, thick.max(0.04 * r))
        } else {
            (r * (1.0 + l.base_gap), 0.16 * r)
        };
        window * ramp(d - inner, 1.0).min(ramp(inner + thick - d, 1.0))
    }

    /// Additive lesion intensity inside the head at local offset.
    fn lesion_intensity(&self, dx: f64, dy: f64) -> f64 {
        let l = &self.lesions;
        let r = self.geo.radius;
        let d = (dx * dx + dy * dy).sqrt() / r;
        let a = from_superior(dx, dy);
        let mut v = 0.0;
        if l.sclerotic {
            let radial = ramp((d - 0.62) * r, 1.5).min(ramp((0.86 - d) * r, 1.5));
            v += 0.22 * self.k * radial * angular_window(a, 65f64.to_radians(), 10f64.to_radians());
        }
        for &(x, y, rad) in &l.cysts {
            let dd = ((dx - x).powi(2) + (dy - y).powi(2)).sqrt();
            v -= 0.26 * self.k * ramp(rad - dd, 1.5);
        }
        if l.crescent {
            let radial = ramp((d - 0.87) * r, 1.0).min(ramp((0.95 - d) * r, 1.0));
            v -= 0.32 * self.k * radial * angular_window(a, 50f64.to_radians(), 8f64.to_radians());
        }
        if l.flatten > 0.0 {
            let chord = -(1.0 - l.flatten) * r;
            let line = ramp(dy - chord, 1.0).min(ramp(chord + 0.09 * r - dy, 1.0));
            v += 0.18 * self.k * line;
        }
        v
    }
}

const FEMUR_DENSITY: f64 = 0.34;
const ACETABULUM_DENSITY: f64 = 0.3;

fn sample_geometry(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Vec<HeadGeometry> {
    let s = spec.image_size as f64;
    spec.heads
        .iter()
        .map(|h| {
            let radius = rng.random_range(RADIUS_RANGE.0..RADIUS_RANGE.1) * s;
            let cx = match h.side {
                Side::Right => rng.random_range(0.26..0.34),
                Side::Left => rng.random_range(0.66..0.74),
            } * s;
            let cy = rng.random_range(0.47..0.57) * s;
            HeadGeometry { cx, cy, radius, side: h.side }
        })
        .collect()
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Renders the radiograph described by `spec`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<PhantomSample> {
    spec.validate()?;
    let size = spec.image_size;
    let s = size as f64;
    let mut geo_rng = stream_rng(spec.seed, 1);
    let geometry = sample_geometry(spec, &mut geo_rng);
    let k = lesion_contrast(spec.noise_level);

    // global anatomy and exposure
    let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-0.01..0.01) * s;
    let field: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                geo_rng.random_range(1.0..3.0) * PI / s,
                geo_rng.random_range(1.0..3.0) * PI / s,
                geo_rng.random_range(0.0..2.0 * PI),
                geo_rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let pelvis_dx = jitter(&mut geo_rng);
    let pelvis_dy = jitter(&mut geo_rng);
    let gain = geo_rng.random_range(0.92..1.08);
    let offset = geo_rng.random_range(-0.03..0.03);

    let scenes: Vec<HeadScene> = spec
        .heads
        .iter()
        .zip(&geometry)
        .enumerate()
        .map(|(i, (h, g))| {
            let mut frng = stream_rng(spec.seed, 10 + i as u64);
            let femur = draw_femur(spec.view, g, &mut frng);
            let mut lrng = stream_rng(spec.seed, 20 + i as u64);
            let lesions = draw_lesions(h, k, g.radius, &mut lrng);
            HeadScene { geo: *g, femur, lesions, k }
        })
        .collect();

    let mut noise_rng = stream_rng(spec.seed, 2);
    let normal = Normal::new(0.0, noise_sigma(spec.noise_level).max(1e-12)).expect("finite sigma");
    let mut data = vec![0.0f32; size * size];
    let mut mask = vec![false; size * size];
    let (pcx, pcy) = (0.5 * s + pelvis_dx, pelvis_dy);

    for j in 0..size {
        let y = j as f64 + 0.5;
        for i in 0..size {
            let x = i as f64 + 0.5;
            let mut v = 0.10;
            for &(fx, fy, px, py) in &field {
                v += 0.012 * (fx * x + px).sin() * (fy * y + py).sin();
            }
            v += 0.07 * ramp(ellipse_sd(x, y, 0.5 * s, 0.58 * s, 0.52 * s, 0.55 * s), 0.03 * s);
            // pelvis
            for sign in [-1.0, 1.0] {
                let wx = pcx + sign * 0.235 * s;
                v += 0.13 * ramp(ellipse_sd(x, y, wx, pcy + 0.27 * s, 0.175 * s, 0.15 * s), 3.0);
                v -= 0.05 * ramp(ellipse_sd(x, y, pcx + sign * 0.25 * s, pcy + 0.23 * s, 0.10 * s, 0.08 * s), 6.0);
                let px = pcx + sign * 0.095 * s;
                let py = pcy + 0.745 * s;
                let ring = ramp(ellipse_sd(x, y, px, py, 0.085 * s, 0.055 * s), 2.0)
                    - ramp(ellipse_sd(x, y, px, py, 0.05 * s, 0.028 * s), 2.0);
                v += 0.14 * ring;
            }
            v += 0.10 * ramp(ellipse_sd(x, y, pcx, pcy + 0.30 * s, 0.075 * s, 0.14 * s), 3.0);

            let mut femur = 0.0f64;
            let mut lesion_here = false;
            for sc in &scenes {
                let g = &sc.geo;
                let f = &sc.femur;
                let neck = ramp(band_sd(x, y, (g.cx, g.cy), f.neck_dir, f.neck_len, f.neck_hw), 1.5);
                let shaft = ramp(band_sd(x, y, f.shaft_start, f.shaft_dir, 2.0 * s, f.shaft_hw), 1.5);
                let (tx, ty, trx, try_) = f.troch;
                let troch = ramp(ellipse_sd(x, y, tx, ty, trx, try_), 1.5);
                let (lx, ly, lrx, lry) = f.lesser;
                let lesser = ramp(ellipse_sd(x, y, lx, ly, lrx, lry), 1.5);
                let mut dens = FEMUR_DENSITY * neck.max(shaft).max(lesser);
                if !f.overlay {
                    dens = dens.max(FEMUR_DENSITY * troch);
                }
                femur = femur.max(dens);

                let (dx, dy) = (x - g.cx, y - g.cy);
                if dx.abs() > 1.7 * g.radius || dy.abs() > 1.7 * g.radius {
                    continue;
                }
                let (cov, intact) = sc.head_cov(dx, dy);
                let d = (dx * dx + dy * dy).sqrt() / g.radius;
                let shade = (1.0 - d * d).max(0.0).sqrt();
                let head_val = 0.42 + 0.10 * shade + sc.lesion_intensity(dx, dy);
                femur = femur * (1.0 - cov) + head_val * cov;
                if f.overlay {
                    femur += 0.10 * troch;
                }
                let acet = sc.acetabulum(dx, dy, true);
                v += ACETABULUM_DENSITY * acet;
                v += 0.18
                    * ramp(
                        ellipse_sd(
                            x,
                            y,
                            g.cx - g.lateral() * 1.25 * g.radius,
                            g.cy + 0.2 * g.radius,
                            0.18 * g.radius,
                            0.35 * g.radius,
                        ),
                        1.0,
                    );
                if sc.lesions.any() {
                    let acet_intact = sc.acetabulum(dx, dy, false);
                    if (cov - intact).abs() > 0.5
                        || (acet - acet_intact).abs() > 0.5
                        || sc.lesion_intensity(dx, dy).abs() * cov > 0.02
                    {
                        lesion_here = true;
                    }
                }
            }
            v += femur;
            let noisy = offset + gain * v + normal.sample(&mut noise_rng);
            data[j * size + i] = noisy.clamp(0.0, 1.0) as f32;
            mask[j * size + i] = lesion_here;
        }
    }

    let ground_truth = spec
        .heads
        .iter()
        .zip(&geometry)
        .map(|(h, g)| HeadTruth { bbox: g.bbox(), stage: h.stage, notes: h.notes.clone(), side: h.side })
        .collect();
    Ok(PhantomSample {
        image: ImageF32::new(size, size, data)?,
        ground_truth,
        view: spec.view,
        subject_id: spec.subject_id.clone(),
        typical: spec.typical,
        geometry,
        lesion_mask: mask,
    })
}
