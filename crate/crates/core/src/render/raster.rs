//! Z-buffer triangle rasterization of part labels, depth and vertex visibility.

use nalgebra::Vector3;

use super::camera::{ndc_to_pixel, WeakPerspectiveCamera};
use crate::body_model::BodyModelDef;

#[derive(Clone, Debug, PartialEq)]
pub struct RasterOutput {
    pub height: usize,
    pub width: usize,
    /// Row-major labels, 0 = background, k+1 = part k.
    pub label_map: Vec<u32>,
    /// Camera-space depth, `+inf` where empty.
    pub depth: Vec<f64>,
    /// Winning face per pixel.
    pub face_index: Vec<Option<u32>>,
    pub vertex_visible: Vec<bool>,
}

impl RasterOutput {
    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.label_map[row * self.width + col]
    }
}

/// Part id of every face: argmax of the summed skinning weights of its
/// corners plus one, the lower part winning ties.
pub fn face_part_labels(model: &BodyModelDef) -> Vec<u32> {
    let k = model.num_joints();
    let w = model.weights().data();
    model
        .faces()
        .iter()
        .map(|f| {
            let mut best = (0usize, f64::NEG_INFINITY);
            for j in 0..k {
                let s: f64 = f.iter().map(|&v| w[v as usize * k + j]).sum();
                if s > best.1 {
                    best = (j, s);
                }
            }
            best.0 as u32 + 1
        })
        .collect()
}

/// Pixel-space projection of a mesh: `(col, row, depth)` per vertex.
pub fn project_to_pixels(
    mesh: &[Vector3<f64>],
    cam: &WeakPerspectiveCamera,
    height: usize,
    width: usize,
) -> Vec<[f64; 3]> {
    mesh.iter()
        .map(|p| {
            let [u, v] = cam.project(p);
            [ndc_to_pixel(u, width), ndc_to_pixel(v, height), cam.depth(p)]
        })
        .collect()
}

/// Depth slack for visibility: a small fraction of the mesh extent plus two
/// pixel widths of world-space distance, since the z-buffer is sampled at
/// pixel centers rather than at the vertex itself.
fn visibility_tolerance(mesh: &[Vector3<f64>], cam: &WeakPerspectiveCamera, height: usize, width: usize) -> f64 {
    if mesh.is_empty() {
        return 0.0;
    }
    let (mut lo, mut hi) = (mesh[0], mesh[0]);
    for p in mesh {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let pixel_world = 2.0 / (cam.s * (height.max(width).max(2) as f64 - 1.0));
    1e-4 * (hi - lo).norm() + 2.0 * pixel_world
}

pub fn rasterize(
    mesh: &[Vector3<f64>],
    faces: &[[u32; 3]],
    face_labels: &[u32],
    cam: &WeakPerspectiveCamera,
    height: usize,
    width: usize,
) -> RasterOutput {
    let n = height * width;
    let mut out = RasterOutput {
        height,
        width,
        label_map: vec![0; n],
        depth: vec![f64::INFINITY; n],
        face_index: vec![None; n],
        vertex_visible: vec![false; mesh.len()],
    };
    let px = project_to_pixels(mesh, cam, height, width);
    for (fi, f) in faces.iter().enumerate() {
        let [a, b, c] = f.map(|i| px[i as usize]);
        let area = edge(a, b, c);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let x0 = a[0].min(b[0]).min(c[0]).ceil().max(0.0);
        let x1 = a[0].max(b[0]).max(c[0]).floor().min(width as f64 - 1.0);
        let y0 = a[1].min(b[1]).min(c[1]).ceil().max(0.0);
        let y1 = a[1].max(b[1]).max(c[1]).floor().min(height as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for row in y0 as usize..=y1 as usize {
            for col in x0 as usize..=x1 as usize {
                let p = [col as f64, row as f64, 0.0];
                let (w0, w1, w2) = (edge(b, c, p) / area, edge(c, a, p) / area, edge(a, b, p) / area);
                // normalized by the signed area, so both windings test the same way
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = w0 * a[2] + w1 * b[2] + w2 * c[2];
                let i = row * width + col;
                if z < out.depth[i] {
                    out.depth[i] = z;
                    out.label_map[i] = face_labels[fi];
                    out.face_index[i] = Some(fi as u32);
                }
            }
        }
    }
    let tol = visibility_tolerance(mesh, cam, height, width);
    for (v, p) in px.iter().enumerate() {
        let (col, row) = (p[0].round(), p[1].round());
        if col < 0.0 || row < 0.0 || col > width as f64 - 1.0 || row > height as f64 - 1.0 {
            continue;
        }
        let d = out.depth[row as usize * width + col as usize];
        out.vertex_visible[v] = d >= p[2] - tol;
    }
    out
}

/// Twice the signed area of (a, b, p).
fn edge(a: [f64; 3], b: [f64; 3], p: [f64; 3]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}
