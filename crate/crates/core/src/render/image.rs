//! RGB images in [0, 1], part palettes and the synthetic appearance model.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::Rng;

use super::raster::RasterOutput;
use crate::error::{CoreError, Result};
use crate::rng;

/// Height × width × 3, row-major, channels last.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width * 3] }
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(height, width);
        img.data.chunks_mut(3).for_each(|p| p.copy_from_slice(&rgb));
        img
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Overwrites the rectangle `[row0, row1) × [col0, col1)` (clipped) with a color.
    pub fn fill_rect(&mut self, row0: usize, row1: usize, col0: usize, col1: usize, rgb: [f64; 3]) {
        for r in row0..row1.min(self.height) {
            for c in col0..col1.min(self.width) {
                self.set_pixel(r, c, rgb);
            }
        }
    }

    /// 8-bit RGB bytes, values clamped to [0, 1] and rounded.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    /// Nearest-neighbor enlargement by an integer factor.
    pub fn upscale(&self, factor: usize) -> Image {
        let f = factor.max(1);
        let mut out = Image::new(self.height * f, self.width * f);
        for r in 0..out.height {
            for c in 0..out.width {
                out.set_pixel(r, c, self.pixel(r / f, c / f));
            }
        }
        out
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.save_png_with_text(path, &[])
    }

    /// PNG with `tEXt` chunks, e.g. the value range a colormapped image shows.
    pub fn save_png_with_text(&self, path: impl AsRef<Path>, text: &[(&str, String)]) -> Result<()> {
        let png_err = |e: png::EncodingError| CoreError::Png(e.to_string());
        let file = File::create(path)?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        for (k, v) in text {
            enc.add_text_chunk(k.to_string(), v.clone()).map_err(png_err)?;
        }
        let mut w = enc.write_header().map_err(png_err)?;
        w.write_image_data(&self.to_rgb8()).map_err(png_err)?;
        w.finish().map_err(png_err)?;
        Ok(())
    }

    /// Channels-first copy, `3 × H × W`.
    pub fn to_chw(&self) -> Vec<f64> {
        let n = self.height * self.width;
        let mut out = vec![0.0; 3 * n];
        for (i, px) in self.data.chunks(3).enumerate() {
            for c in 0..3 {
                out[c * n + i] = px[c];
            }
        }
        out
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.fract() * 6.0).rem_euclid(6.0);
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// `parts + 1` colors: black background followed by golden-ratio hues.
pub fn part_palette(parts: usize) -> Vec<[f64; 3]> {
    let mut p = vec![[0.0; 3]];
    for k in 0..parts {
        let h = (k as f64 * 0.618_033_988_749_895).fract();
        let v = if k % 2 == 0 { 0.95 } else { 0.75 };
        p.push(hsv(h, 0.8, v));
    }
    p
}

/// Smooth colored value noise on a coarse lattice, bilinearly upsampled.
pub fn noise_background(seed: u64, index: u64, height: usize, width: usize) -> Image {
    let mut rng = rng::stream(seed, index, "background");
    let cells = 6;
    let base: [f64; 3] = [rng.gen_range(0.2..0.7), rng.gen_range(0.2..0.7), rng.gen_range(0.2..0.7)];
    let lattice: Vec<[f64; 3]> = (0..(cells + 1) * (cells + 1))
        .map(|_| {
            let d = rng.gen_range(-0.15..0.15);
            [
                base[0] + d + rng.gen_range(-0.05..0.05),
                base[1] + d + rng.gen_range(-0.05..0.05),
                base[2] + d + rng.gen_range(-0.05..0.05),
            ]
        })
        .collect();
    let mut img = Image::new(height, width);
    for r in 0..height {
        let fy = r as f64 / height.max(2).saturating_sub(1) as f64 * cells as f64;
        let (y0, ty) = ((fy.floor() as usize).min(cells - 1), fy - (fy.floor()).min(cells as f64 - 1.0));
        for c in 0..width {
            let fx = c as f64 / width.max(2).saturating_sub(1) as f64 * cells as f64;
            let (x0, tx) = ((fx.floor() as usize).min(cells - 1), fx - (fx.floor()).min(cells as f64 - 1.0));
            let at = |y: usize, x: usize| lattice[y * (cells + 1) + x];
            let mut px = [0.0; 3];
            for (ch, out) in px.iter_mut().enumerate() {
                let top = at(y0, x0)[ch] * (1.0 - tx) + at(y0, x0 + 1)[ch] * tx;
                let bot = at(y0 + 1, x0)[ch] * (1.0 - tx) + at(y0 + 1, x0 + 1)[ch] * tx;
                *out = (top * (1.0 - ty) + bot * ty).clamp(0.0, 1.0);
            }
            img.set_pixel(r, c, px);
        }
    }
    img
}

/// Flat part colors scaled by a per-part brightness factor, over a background.
/// Pixels are looked up at raster resolution with nearest-neighbor sampling
/// when the background is larger than the raster.
pub fn render_sample_image(raster: &RasterOutput, palette: &[[f64; 3]], background: &Image, shading: &[f64]) -> Image {
    let mut img = background.clone();
    for r in 0..img.height {
        let rr = r * raster.height / img.height;
        for c in 0..img.width {
            let cc = c * raster.width / img.width;
            let label = raster.label(rr, cc) as usize;
            if label > 0 {
                let k = shading.get(label).copied().unwrap_or(1.0);
                let base = palette[label];
                img.set_pixel(r, c, base.map(|x| (x * k).clamp(0.0, 1.0)));
            }
        }
    }
    img
}

/// Per-label brightness factors in [0.85, 1.15]; entry 0 is unused.
pub fn shading_jitter(seed: u64, index: u64, labels: usize) -> Vec<f64> {
    let mut rng = rng::stream(seed, index, "shading");
    (0..labels).map(|_| rng.gen_range(0.85..1.15)).collect()
}
