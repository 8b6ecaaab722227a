//! PNG, CSV and PLY output of sensitivity maps and meshes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use super::SensitivityMap;
use crate::error::{CoreError, Result};
use crate::render::Image;

/// Black, red, yellow, white at t = 0, 1/3, 2/3, 1; the channel sum is 3t,
/// so brightness grows with the value.
pub fn heat_color(t: f64) -> [f64; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    [(3.0 * t).min(1.0), (3.0 * t - 1.0).clamp(0.0, 1.0), (3.0 * t - 2.0).clamp(0.0, 1.0)]
}

/// Minimum and maximum of the finite values.
fn range(values: impl IntoIterator<Item = f64>) -> Option<(f64, f64)> {
    values.into_iter().filter(|v| v.is_finite()).fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

fn normalize(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.0
    }
}

/// `rows × cols` values colored over `[lo, hi]`.
pub fn map_image(values: &[f64], rows: usize, cols: usize, lo: f64, hi: f64) -> Image {
    let mut img = Image::new(rows, cols);
    for (i, &v) in values.iter().enumerate().take(rows * cols) {
        img.set_pixel(i / cols, i % cols, heat_color(normalize(v, lo, hi)));
    }
    img
}

/// One channel of `map`, normalized to its own range and enlarged by `scale`.
/// The range is stored in the `min_mm`/`max_mm` text chunks; the return value
/// is that range.
pub fn write_map_png(path: impl AsRef<Path>, map: &SensitivityMap, channel: usize, scale: usize) -> Result<(f64, f64)> {
    let values = map.channel(channel);
    let (lo, hi) = range(values.iter().copied()).unwrap_or((0.0, 0.0));
    let img = map_image(values, map.rows, map.cols, lo, hi).upscale(scale);
    img.save_png_with_text(path, &[("min_mm", format!("{lo}")), ("max_mm", format!("{hi}"))])?;
    Ok((lo, hi))
}

/// `channel,row,col,error_mm` lines; the last channel is the joint mean.
pub fn write_grid_csv(path: impl AsRef<Path>, map: &SensitivityMap) -> Result<()> {
    let mut s = String::from("channel,row,col,error_mm\n");
    for c in 0..map.channels() {
        for r in 0..map.rows {
            for col in 0..map.cols {
                writeln!(s, "{c},{r},{col},{}", map.at(c, r, col)).expect("string write");
            }
        }
    }
    fs::write(path, s)?;
    Ok(())
}

/// Reads a grid CSV back into `(channels, rows, cols, values)` in channel,
/// row, column order.
pub fn read_grid_csv(path: impl AsRef<Path>) -> Result<(usize, usize, usize, Vec<f64>)> {
    let text = fs::read_to_string(path)?;
    let bad = |line: usize| CoreError::Data(format!("malformed grid CSV at line {}", line + 1));
    let mut cells = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(i));
        }
        let idx: Vec<usize> = f[..3].iter().map(|x| x.parse().map_err(|_| bad(i))).collect::<Result<_>>()?;
        let v: f64 = f[3].parse().map_err(|_| bad(i))?;
        cells.push((idx[0], idx[1], idx[2], v));
    }
    let dim = |k: fn(&(usize, usize, usize, f64)) -> usize| cells.iter().map(k).max().map_or(0, |m| m + 1);
    let (ch, rows, cols) = (dim(|c| c.0), dim(|c| c.1), dim(|c| c.2));
    if cells.len() != ch * rows * cols {
        return Err(CoreError::Data("grid CSV does not cover a full grid".into()));
    }
    let mut grid = vec![f64::NAN; cells.len()];
    for (c, r, col, v) in cells {
        grid[(c * rows + r) * cols + col] = v;
    }
    Ok((ch, rows, cols, grid))
}

/// Gray of vertices without a value.
pub const EMPTY_VERTEX_GRAY: u8 = 128;

/// ASCII PLY with per-vertex colors over the range of the defined values.
pub fn write_mesh_ply(path: impl AsRef<Path>, vertices: &[Vector3<f64>], faces: &[[u32; 3]], values: &[Option<f64>]) -> Result<()> {
    let (lo, hi) = range(values.iter().flatten().copied()).unwrap_or((0.0, 0.0));
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    writeln!(s, "comment error range mm {lo} {hi}").expect("string write");
    writeln!(s, "element vertex {}", vertices.len()).expect("string write");
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    writeln!(s, "element face {}", faces.len()).expect("string write");
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for (p, v) in vertices.iter().zip(values) {
        let rgb = match v {
            Some(v) => heat_color(normalize(*v, lo, hi)).map(|c| (c * 255.0).round() as u8),
            None => [EMPTY_VERTEX_GRAY; 3],
        };
        writeln!(s, "{} {} {} {} {} {}", p.x, p.y, p.z, rgb[0], rgb[1], rgb[2]).expect("string write");
    }
    for f in faces {
        writeln!(s, "3 {} {} {}", f[0], f[1], f[2]).expect("string write");
    }
    fs::write(path, s)?;
    Ok(())
}
