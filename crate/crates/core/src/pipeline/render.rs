//! Annotated overlay image and plain-text report.

use image::{Rgb, RgbImage};

use super::diagnose::{FhRecord, SubjectDiagnosis};
use crate::classification::Stage;
use crate::error::Result;
use crate::imaging::ImageF32;

/// CAM blend weight at full heat.
pub const CAM_ALPHA: f32 = 0.45;

/// 5x7 glyphs, one byte per row, low five bits used.
fn glyph(c: char) -> [u8; 7] {
    match c {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        _ => [0; 7],
    }
}

fn stage_color(s: Stage) -> Rgb<u8> {
    match s {
        Stage::Absence => Rgb([60, 200, 90]),
        Stage::II => Rgb([240, 200, 40]),
        Stage::III => Rgb([245, 130, 30]),
        Stage::IV => Rgb([230, 40, 40]),
    }
}

/// Piecewise-linear jet colormap.
pub fn jet(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    let ch = |c: f32| (1.5 - (4.0 * v - c).abs()).clamp(0.0, 1.0);
    [ch(3.0), ch(2.0), ch(1.0)]
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn draw_rect(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, thick: i64, c: Rgb<u8>) {
    for t in 0..thick {
        for x in x0..=x1 {
            put(img, x, y0 + t, c);
            put(img, x, y1 - t, c);
        }
        for y in y0..=y1 {
            put(img, x0 + t, y, c);
            put(img, x1 - t, y, c);
        }
    }
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, scale: i64, c: Rgb<u8>) {
    for (i, ch) in text.chars().enumerate() {
        let g = glyph(ch.to_ascii_uppercase());
        let ox = x + i as i64 * 6 * scale;
        for (row, bits) in g.iter().enumerate() {
            for col in 0..5 {
                if bits & (0x10 >> col) != 0 {
                    for dy in 0..scale {
                        for dx in 0..scale {
                            put(img, ox + col * scale + dx, y + row as i64 * scale + dy, c);
                        }
                    }
                }
            }
        }
    }
}

/// Short on-image tag, e.g. `III R AP`.
pub fn box_label(r: &FhRecord) -> String {
    let stage = match r.stage {
        Stage::Absence => "ABS",
        s => s.label(),
    };
    let side = match r.side {
        crate::classification::Side::Left => "L",
        crate::classification::Side::Right => "R",
    };
    format!("{stage} {side} {:?}", r.view)
}

/// Grayscale radiograph with CAM heat blended inside each box, stage-coloured
/// outlines and labels.
pub fn render_overlay(image: &ImageF32, records: &[FhRecord]) -> RgbImage {
    let (w, h) = (image.width() as u32, image.height() as u32);
    let mut out = RgbImage::from_fn(w, h, |x, y| {
        let v = (image.get(x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([v, v, v])
    });
    let scale = ((w.min(h) / 256).max(1)) as i64;
    for r in records {
        let b = r.bbox;
        let (x0, y0) = (b.x_min.floor().max(0.0) as u32, b.y_min.floor().max(0.0) as u32);
        let (x1, y1) = ((b.x_max.ceil() as u32).min(w), (b.y_max.ceil() as u32).min(h));
        if let Some(cam) = &r.cam {
            if x1 > x0 && y1 > y0 {
                let heat = cam.resized((x1 - x0) as usize, (y1 - y0) as usize);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let v = heat.get((x - x0) as usize, (y - y0) as usize);
                        let a = CAM_ALPHA * v;
                        let col = jet(v);
                        let px = out.get_pixel_mut(x, y);
                        for k in 0..3 {
                            px.0[k] = ((1.0 - a) * px.0[k] as f32 + a * 255.0 * col[k]).round().clamp(0.0, 255.0) as u8;
                        }
                    }
                }
            }
        }
        let c = stage_color(r.stage);
        draw_rect(&mut out, x0 as i64, y0 as i64, x1 as i64 - 1, y1 as i64 - 1, scale, c);
        let ty = (y0 as i64 - 9 * scale).max(0);
        draw_text(&mut out, x0 as i64, ty, &box_label(r), scale, c);
    }
    out
}

pub fn render_overlay_png(image: &ImageF32, records: &[FhRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    render_overlay(image, records).write_to(&mut std::io::Cursor::new(&mut buf), image::ImageFormat::Png)?;
    Ok(buf)
}

fn side_word(r: &FhRecord) -> &'static str {
    match r.side {
        crate::classification::Side::Left => "left",
        crate::classification::Side::Right => "right",
    }
}

/// One line per head: side, view, stage with probability, caption.
pub fn render_text(records: &[FhRecord]) -> String {
    if records.is_empty() {
        return "No findings\n".to_string();
    }
    let mut s = String::new();
    for (i, r) in records.iter().enumerate() {
        s.push_str(&format!(
            "Head {} ({} hip, {:?} view, p={:.3}): {}\n",
            i + 1,
            side_word(r),
            r.view,
            r.stage_probs[r.stage.index()],
            r.caption
        ));
    }
    s
}

pub fn render_subject_text(d: &SubjectDiagnosis) -> String {
    let mut s = format!("Subject {}: final stage {}\n", d.subject_id, d.final_stage);
    for (side, st) in &d.per_side {
        s.push_str(&format!("  {side:?} hip: {st}\n"));
    }
    s.push_str(&format!("  evidence: {}\n", d.evidence.join(", ")));
    s
}

/// Overlay PNG and text report for one radiograph.
pub fn render_report(image: &ImageF32, records: &[FhRecord]) -> Result<(Vec<u8>, String)> {
    Ok((render_overlay_png(image, records)?, render_text(records)))
}
