//! Occlusion sensitivity: slide a gray square over an image, re-run the
//! regressor at every position and record the per-joint 3D error.

mod export;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body_model::{lbs_rotmats, BodyModelDef};
use crate::data::Sample;
use crate::error::{CoreError, Result};
use crate::metrics::{root_aligned_errors, MM_PER_M};
use crate::net::{Network, Prediction};
use crate::render::{face_part_labels, project_to_pixels, rasterize, Image, WeakPerspectiveCamera};

pub use export::{heat_color, map_image, read_grid_csv, write_grid_csv, write_map_png, write_mesh_ply};

/// Anything that maps images to body predictions.
pub trait Regressor: Sync {
    fn image_size(&self) -> usize;
    fn body(&self) -> &BodyModelDef;
    fn predict(&self, images: &[&Image]) -> Result<Vec<Prediction>>;
}

impl Regressor for Network {
    fn image_size(&self) -> usize {
        self.config().image_size
    }

    fn body(&self) -> &BodyModelDef {
        Network::body(self)
    }

    fn predict(&self, images: &[&Image]) -> Result<Vec<Prediction>> {
        Network::predict(self, images)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Side of the square occluder, in pixels.
    pub patch: usize,
    /// Distance between occluder centers; none means `patch / 3`, rounded.
    pub stride: Option<usize>,
    /// Gray level of the occluder in [0, 1].
    pub gray: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { patch: 12, stride: None, gray: 0.5 }
    }
}

impl ProbeConfig {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(((self.patch as f64 / 3.0).round() as usize).max(1))
    }

    pub fn validate(&self, image_size: usize) -> Result<()> {
        if self.patch == 0 || self.patch >= image_size {
            return Err(CoreError::Config(format!("patch {} must be in 1..{image_size}", self.patch)));
        }
        if self.stride() == 0 {
            return Err(CoreError::Config("stride must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gray) {
            return Err(CoreError::Config(format!("gray {} is outside [0, 1]", self.gray)));
        }
        Ok(())
    }

    /// Occluder centers per axis: `floor((S − 1) / stride) + 1`.
    pub fn grid_size(&self, image_size: usize) -> usize {
        (image_size - 1) / self.stride() + 1
    }

    /// Pixel rows (or columns) `[lo, hi)` covered by the occluder centered at
    /// grid index `g`, clipped to the image.
    pub fn patch_span(&self, g: usize, image_size: usize) -> (usize, usize) {
        let lo = (g * self.stride()) as isize - (self.patch / 2) as isize;
        let hi = lo + self.patch as isize;
        (lo.max(0) as usize, (hi.min(image_size as isize)) as usize)
    }

    pub fn occlude(&self, image: &Image, gy: usize, gx: usize) -> Image {
        let (r0, r1) = self.patch_span(gy, image.height);
        let (c0, c1) = self.patch_span(gx, image.width);
        let mut out = image.clone();
        out.fill_rect(r0, r1, c0, c1, [self.gray; 3]);
        out
    }
}

/// Per-joint error, in millimeters, with the occluder at each grid position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMap {
    pub rows: usize,
    pub cols: usize,
    pub joints: usize,
    pub patch: usize,
    pub stride: usize,
    pub gray: f64,
    /// `(joints + 1) × rows × cols`; the last channel is the mean over joints.
    pub grid: Vec<f64>,
    /// Error without an occluder, per joint plus the mean.
    pub baseline: Vec<f64>,
}

impl SensitivityMap {
    /// Channels including the aggregate.
    pub fn channels(&self) -> usize {
        self.joints + 1
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.grid[c * n..(c + 1) * n]
    }

    pub fn aggregate(&self) -> &[f64] {
        self.channel(self.joints)
    }

    pub fn at(&self, c: usize, gy: usize, gx: usize) -> f64 {
        self.grid[(c * self.rows + gy) * self.cols + gx]
    }

    /// Bilinear value of channel `c` at pixel `(row, col)`; grid node `(i, j)`
    /// sits at pixel `(i·stride, j·stride)`, beyond the last node the edge holds.
    pub fn sample(&self, c: usize, row: f64, col: f64) -> f64 {
        let s = self.stride as f64;
        let y = (row / s).clamp(0.0, (self.rows - 1) as f64);
        let x = (col / s).clamp(0.0, (self.cols - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.rows - 1), (x0 + 1).min(self.cols - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        // a + (b − a)·f is exact at nodes and on constant grids
        let lerp = |a: f64, b: f64, f: f64| a + (b - a) * f;
        let top = lerp(self.at(c, y0, x0), self.at(c, y0, x1), fx);
        let bottom = lerp(self.at(c, y1, x0), self.at(c, y1, x1), fx);
        lerp(top, bottom, fy)
    }

    /// The map restricted to every `factor`-th grid position on both axes.
    pub fn subsample(&self, factor: usize) -> SensitivityMap {
        let rows = (self.rows - 1) / factor + 1;
        let cols = (self.cols - 1) / factor + 1;
        let mut grid = Vec::with_capacity(self.channels() * rows * cols);
        for c in 0..self.channels() {
            for gy in 0..rows {
                for gx in 0..cols {
                    grid.push(self.at(c, gy * factor, gx * factor));
                }
            }
        }
        SensitivityMap { rows, cols, stride: self.stride * factor, grid, ..self.clone() }
    }
}

/// Root-aligned per-joint errors in millimeters, followed by their mean.
fn joint_errors(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Vec<f64> {
    let mut e: Vec<f64> = root_aligned_errors(pred, gt).into_iter().map(|v| v * MM_PER_M).collect();
    let mean = e.iter().sum::<f64>() / e.len() as f64;
    e.push(mean);
    e
}

/// Error of `model` on `sample` seen through `image`, per joint plus the mean.
pub fn image_error(model: &dyn Regressor, sample: &Sample, image: &Image) -> Result<Vec<f64>> {
    let pred = model.predict(&[image])?;
    Ok(joint_errors(&pred[0].joints3d, &sample.joints3d))
}

/// Occlusion sensitivity map of one sample. Every position is an independent
/// single-image inference, so results do not depend on batching or threads.
pub fn probe_image(model: &dyn Regressor, sample: &Sample, cfg: &ProbeConfig) -> Result<SensitivityMap> {
    let size = model.image_size();
    if sample.image.height != size || sample.image.width != size {
        return Err(CoreError::Shape { op: "probe_image", detail: format!("image {}×{}, model expects {size}×{size}", sample.image.height, sample.image.width) });
    }
    cfg.validate(size)?;
    let g = cfg.grid_size(size);
    let joints = sample.joints3d.len();
    let baseline = image_error(model, sample, &sample.image)?;
    let cells: Vec<Vec<f64>> = (0..g * g)
        .into_par_iter()
        .map(|i| image_error(model, sample, &cfg.occlude(&sample.image, i / g, i % g)))
        .collect::<Result<_>>()?;
    let mut grid = vec![0.0; (joints + 1) * g * g];
    for (i, e) in cells.iter().enumerate() {
        for (c, v) in e.iter().enumerate() {
            grid[c * g * g + i] = *v;
        }
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite("occlusion sensitivity grid".into()));
    }
    Ok(SensitivityMap { rows: g, cols: g, joints, patch: cfg.patch, stride: cfg.stride(), gray: cfg.gray, grid, baseline })
}

/// Per-joint error sums and counts over mesh vertices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMesh {
    pub joints: usize,
    pub vertices: usize,
    /// `joints × vertices`.
    pub sums: Vec<f64>,
    /// Contributions per vertex; every joint receives one per visible vertex.
    pub counts: Vec<u64>,
}

impl SensitivityMesh {
    pub fn new(joints: usize, vertices: usize) -> Self {
        Self { joints, vertices, sums: vec![0.0; joints * vertices], counts: vec![0; vertices] }
    }

    pub fn add(&mut self, other: &SensitivityMesh) {
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Mean error of joint `j` at vertex `v`, if any image saw the vertex.
    pub fn mean(&self, j: usize, v: usize) -> Option<f64> {
        (self.counts[v] > 0).then(|| self.sums[j * self.vertices + v] / self.counts[v] as f64)
    }

    /// Per-vertex means of joint `j`.
    pub fn joint_means(&self, j: usize) -> Vec<Option<f64>> {
        (0..self.vertices).map(|v| self.mean(j, v)).collect()
    }

    /// Per-vertex means averaged over joints.
    pub fn overall_means(&self) -> Vec<Option<f64>> {
        (0..self.vertices)
            .map(|v| (self.counts[v] > 0).then(|| (0..self.joints).map(|j| self.sums[j * self.vertices + v]).sum::<f64>() / (self.joints as f64 * self.counts[v] as f64)))
            .collect()
    }
}

/// Samples each joint's map at the projected pixel of every visible vertex
/// inside the image.
pub fn transfer_to_mesh(map: &SensitivityMap, mesh: &[Vector3<f64>], cam: &WeakPerspectiveCamera, visible: &[bool], image_size: usize) -> SensitivityMesh {
    let mut out = SensitivityMesh::new(map.joints, mesh.len());
    let edge = (image_size - 1) as f64;
    for (v, px) in project_to_pixels(mesh, cam, image_size, image_size).iter().enumerate() {
        let (col, row) = (px[0], px[1]);
        if !visible[v] || !(0.0..=edge).contains(&col) || !(0.0..=edge).contains(&row) {
            continue;
        }
        out.counts[v] = 1;
        for j in 0..map.joints {
            out.sums[j * mesh.len() + v] = map.sample(j, row, col);
        }
    }
    out
}

/// Vertex visibility of a predicted body under its predicted camera.
pub fn predicted_visibility(body: &BodyModelDef, pred: &Prediction, image_size: usize) -> Vec<bool> {
    let cam = WeakPerspectiveCamera::new(pred.scale, pred.trans);
    let labels = face_part_labels(body);
    rasterize(&pred.vertices, body.faces(), &labels, &cam, image_size, image_size).vertex_visible
}

/// Sensitivity map of one sample and its transfer onto the predicted body.
pub fn probe_to_mesh(model: &dyn Regressor, sample: &Sample, cfg: &ProbeConfig) -> Result<(SensitivityMap, SensitivityMesh)> {
    let size = model.image_size();
    let map = probe_image(model, sample, cfg)?;
    let pred = model.predict(&[&sample.image])?.remove(0);
    let visible = predicted_visibility(model.body(), &pred, size);
    let cam = WeakPerspectiveCamera::new(pred.scale, pred.trans);
    let mesh = transfer_to_mesh(&map, &pred.vertices, &cam, &visible, size);
    Ok((map, mesh))
}

/// Pooled sensitivity over a set of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSensitivity {
    pub mesh: SensitivityMesh,
    /// Grid-wise mean of the per-image maps; the baseline is averaged too.
    pub mean_map: SensitivityMap,
}

/// Probes every sample and sums the results in sample order.
pub fn aggregate_dataset(model: &dyn Regressor, samples: &[Sample], cfg: &ProbeConfig) -> Result<DatasetSensitivity> {
    let (first, rest) = samples.split_first().ok_or_else(|| CoreError::Data("no samples to probe".into()))?;
    let (mut mean_map, mut mesh) = probe_to_mesh(model, first, cfg)?;
    for s in rest {
        let (map, m) = probe_to_mesh(model, s, cfg)?;
        mesh.add(&m);
        for (a, b) in mean_map.grid.iter_mut().zip(&map.grid) {
            *a += b;
        }
        for (a, b) in mean_map.baseline.iter_mut().zip(&map.baseline) {
            *a += b;
        }
    }
    let n = samples.len() as f64;
    mean_map.grid.iter_mut().for_each(|v| *v /= n);
    mean_map.baseline.iter_mut().for_each(|v| *v /= n);
    Ok(DatasetSensitivity { mesh, mean_map })
}

/// Pixels covered by the ground-truth body of `sample`.
pub fn body_mask(body: &BodyModelDef, sample: &Sample, use_posedirs: bool) -> Result<Vec<bool>> {
    let size = sample.image.height;
    let posed = lbs_rotmats(body, &sample.rotmats(), &sample.betas, use_posedirs)?;
    let labels = face_part_labels(body);
    let r = rasterize(&posed.vertices, body.faces(), &labels, &sample.camera(), size, size);
    Ok(r.label_map.iter().map(|&l| l != 0).collect())
}

/// Whether the occluder at each grid position, row-major, covers any body pixel.
pub fn patches_on_body(cfg: &ProbeConfig, mask: &[bool], image_size: usize) -> Vec<bool> {
    let g = cfg.grid_size(image_size);
    (0..g * g)
        .map(|i| {
            let (r0, r1) = cfg.patch_span(i / g, image_size);
            let (c0, c1) = cfg.patch_span(i % g, image_size);
            (r0..r1).any(|r| (c0..c1).any(|c| mask[r * image_size + c]))
        })
        .collect()
}
