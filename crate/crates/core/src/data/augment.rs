//! Occlusion augmentations: a pasted rectangle (SynthOcc) and a band cut
//! from the person's bounding box (RandCrop).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{CoreError, Result};
use crate::render::{noise_background, pixel_to_ndc, Image};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthOccConfig {
    pub prob: f64,
    /// Rectangle side as a fraction of the image side, drawn per axis.
    pub min_side: f64,
    pub max_side: f64,
}

impl Default for SynthOccConfig {
    fn default() -> Self {
        Self { prob: 0.5, min_side: 0.1, max_side: 0.4 }
    }
}

impl SynthOccConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.prob) {
            return Err(CoreError::Config(format!("synth_occ.prob {} is outside [0, 1]", self.prob)));
        }
        if !(self.min_side > 0.0 && self.min_side <= self.max_side && self.max_side <= 1.0) {
            return Err(CoreError::Config("synth_occ sides must satisfy 0 < min ≤ max ≤ 1".into()));
        }
        Ok(())
    }

    pub fn always(&self) -> Self {
        Self { prob: 1.0, ..self.clone() }
    }
}

/// Pixel rectangle `[row0, row1) × [col0, col1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccluderBox {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl OccluderBox {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row0..self.row1).contains(&row) && (self.col0..self.col1).contains(&col)
    }
}

/// With probability `cfg.prob`, pastes one uniformly colored rectangle at a
/// uniform centre, clipped to the image.
pub fn synth_occ<R: Rng>(image: &Image, rng: &mut R, cfg: &SynthOccConfig) -> (Image, Option<OccluderBox>) {
    if !rng.gen_bool(cfg.prob) {
        return (image.clone(), None);
    }
    let side = |rng: &mut R, n: usize| {
        let f = if cfg.max_side > cfg.min_side { rng.gen_range(cfg.min_side..=cfg.max_side) } else { cfg.min_side };
        ((f * n as f64).round() as usize).max(1)
    };
    let (h, w) = (side(rng, image.height), side(rng, image.width));
    let (cy, cx) = (rng.gen_range(0..image.height), rng.gen_range(0..image.width));
    let color = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
    let b = OccluderBox {
        row0: cy.saturating_sub(h / 2),
        row1: (cy + h - h / 2).min(image.height),
        col0: cx.saturating_sub(w / 2),
        col1: (cx + w - w / 2).min(image.width),
    };
    let mut out = image.clone();
    out.fill_rect(b.row0, b.row1, b.col0, b.col1, color);
    (out, Some(b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandCropConfig {
    pub prob: f64,
    /// Removed fraction of the bounding box along the cut axis.
    pub min_frac: f64,
    pub max_frac: f64,
}

impl Default for RandCropConfig {
    fn default() -> Self {
        Self { prob: 0.3, min_frac: 0.3, max_frac: 0.5 }
    }
}

impl RandCropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.prob) {
            return Err(CoreError::Config(format!("rand_crop.prob {} is outside [0, 1]", self.prob)));
        }
        if !(self.min_frac >= 0.0 && self.min_frac <= self.max_frac && self.max_frac <= 1.0) {
            return Err(CoreError::Config("rand_crop fractions must satisfy 0 ≤ min ≤ max ≤ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Top,
    Bottom,
    Left,
    Right,
}

/// With probability `cfg.prob`, removes a band from a random side of the
/// joint bounding box. Returns the side and fraction when applied.
pub fn rand_crop<R: Rng>(sample: &Sample, rng: &mut R, cfg: &RandCropConfig) -> (Sample, Option<(Side, f64)>) {
    if !rng.gen_bool(cfg.prob) {
        return (sample.clone(), None);
    }
    let side = [Side::Top, Side::Bottom, Side::Left, Side::Right][rng.gen_range(0..4)];
    let frac = if cfg.max_frac > cfg.min_frac { rng.gen_range(cfg.min_frac..=cfg.max_frac) } else { cfg.min_frac };
    (crop_band(sample, side, frac), Some((side, frac)))
}

/// Replaces everything beyond the cut line with the sample's background,
/// clears part labels there and zeroes the 2D confidence of joints past it.
/// 3D targets are untouched.
pub fn crop_band(sample: &Sample, side: Side, frac: f64) -> Sample {
    let mut out = sample.clone();
    let (xs, ys): (Vec<f64>, Vec<f64>) = sample.joints2d.iter().map(|p| (p[0], p[1])).unzip();
    let lo = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (x0, x1, y0, y1) = (lo(&xs), hi(&xs), lo(&ys), hi(&ys));
    // (axis, cut in normalized coordinates, removes the high side?)
    let (axis, cut, high) = match side {
        Side::Top => (1, y0 + frac * (y1 - y0), false),
        Side::Bottom => (1, y1 - frac * (y1 - y0), true),
        Side::Left => (0, x0 + frac * (x1 - x0), false),
        Side::Right => (0, x1 - frac * (x1 - x0), true),
    };
    let removed = |u: f64| if high { u >= cut } else { u <= cut };

    let img = &mut out.image;
    let s = img.height;
    let bg = noise_background(sample.seed, sample.index, img.height, img.width);
    for r in 0..img.height {
        for c in 0..img.width {
            let u = pixel_to_ndc(if axis == 0 { c } else { r } as f64, s);
            if removed(u) {
                img.set_pixel(r, c, bg.pixel(r, c));
            }
        }
    }
    let l = out.label_size;
    for r in 0..l {
        for c in 0..l {
            if removed(pixel_to_ndc(if axis == 0 { c } else { r } as f64, l)) {
                out.part_labels[r * l + c] = 0;
            }
        }
    }
    for (j, p) in sample.joints2d.iter().enumerate() {
        if removed(p[axis]) {
            out.confidence[j] = 0.0;
            out.visibility[j] = false;
        }
    }
    out
}
