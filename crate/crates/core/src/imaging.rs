//! Grayscale float images: PNG/JPEG I/O, cropping, bilinear resampling.
//!
//! Pixel centers sit at half-integer coordinates, so a region `[x0, x1)` of
//! width `w` resampled to `w` output columns reproduces the source exactly.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, Luma};

use crate::error::{Error, Result};

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF32 {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ImageF32 {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be nonzero"));
        }
        if data.len() != width * height {
            return Err(Error::invalid(format!("image buffer has {} values, expected {}", data.len(), width * height)));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be nonzero");
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at `i + 0.5`),
    /// clamping to the border.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> f32 {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = (fx - x0 as f64) as f32;
        let ty = (fy - y0 as f64) as f32;
        let top = self.get(x0, y0) * (1.0 - tx) + self.get(x1, y0) * tx;
        let bottom = self.get(x0, y1) * (1.0 - tx) + self.get(x1, y1) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    /// Resamples the axis-aligned region `[x0, x1) x [y0, y1)` (pixel units) to
    /// `out_w x out_h` with bilinear interpolation. When shrinking, each output
    /// pixel averages a `ceil(scale)^2` grid of bilinear samples over its footprint.
    pub fn crop_resize(&self, region: [f64; 4], out_w: usize, out_h: usize) -> ImageF32 {
        let [x0, y0, x1, y1] = region;
        let sx = (x1 - x0) / out_w as f64;
        let sy = (y1 - y0) / out_h as f64;
        let nx = sx.abs().ceil().max(1.0) as usize;
        let ny = sy.abs().ceil().max(1.0) as usize;
        let norm = 1.0 / (nx * ny) as f32;
        let mut data = Vec::with_capacity(out_w * out_h);
        for v in 0..out_h {
            for u in 0..out_w {
                let mut acc = 0.0f32;
                for j in 0..ny {
                    let y = y0 + (v as f64 + (j as f64 + 0.5) / ny as f64) * sy;
                    for i in 0..nx {
                        let x = x0 + (u as f64 + (i as f64 + 0.5) / nx as f64) * sx;
                        acc += self.sample(x, y);
                    }
                }
                data.push(acc * norm);
            }
        }
        ImageF32 { width: out_w, height: out_h, data }
    }

    pub fn resize(&self, out_w: usize, out_h: usize) -> ImageF32 {
        self.crop_resize([0.0, 0.0, self.width as f64, self.height as f64], out_w, out_h)
    }

    pub fn flip_horizontal(&self) -> ImageF32 {
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.width) {
            row.reverse();
        }
        out
    }

    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = self.get(x as usize, y as usize).clamp(0.0, 1.0);
            Luma([(v * 255.0).round() as u8])
        })
    }

    pub fn from_gray8(img: &GrayImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Self { width: w as usize, height: h as usize, data }
    }

    /// Rounds through the 8-bit representation used on disk.
    pub fn quantize8(&self) -> ImageF32 {
        Self::from_gray8(&self.to_gray8())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.to_gray8().write_to(&mut Cursor::new(&mut buf), ImageFormat::Png)?;
        Ok(buf)
    }

    /// Decodes PNG or JPEG bytes; color inputs are converted to luma.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?;
        Ok(Self::from_dynamic(img))
    }

    pub fn from_dynamic(img: DynamicImage) -> Self {
        Self::from_gray8(&img.into_luma8())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
