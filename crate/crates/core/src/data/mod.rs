//! Deterministic synthetic samples: pose and shape sampling, rendering, the
//! two occlusion augmentations and sharded storage.

mod augment;
mod io;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::body_model::rotation::{matrix_to_axis_angle, rot_x, rot_y, rot_z};
use crate::body_model::{lbs_rotmats, BodyModelDef, Pose};
use crate::error::{CoreError, Result};
use crate::net::config::BodyModelSource;
use crate::net::root_init_rotation;
use crate::render::{
    face_part_labels, ndc_to_pixel, project_to_pixels, noise_background, part_palette, rasterize, render_sample_image, shading_jitter,
    Image, WeakPerspectiveCamera,
};
use crate::rng;

pub use augment::{crop_band, rand_crop, synth_occ, OccluderBox, RandCropConfig, Side, SynthOccConfig};
pub use io::{read_dataset, write_dataset, Dataset, DatasetIndex, ShardEntry, SHARD_SIZE};

/// Euler (x, y, z) angle intervals in radians; the joint rotation is `Rz·Ry·Rx`.
pub type JointLimits = [[f64; 2]; 3];

const DEG: f64 = std::f64::consts::PI / 180.0;

/// Anatomically bounded ranges on the 24-joint skeleton (y up, facing +z,
/// left on +x). The root entry is applied on top of the camera-facing flip.
pub fn default_pose_limits(joints: usize) -> Vec<JointLimits> {
    let sym = |x: f64, y: f64, z: f64| [[-x * DEG, x * DEG], [-y * DEG, y * DEG], [-z * DEG, z * DEG]];
    let table: [JointLimits; 24] = [
        sym(15.0, 45.0, 10.0),
        [[-70.0 * DEG, 25.0 * DEG], [-20.0 * DEG, 20.0 * DEG], [-5.0 * DEG, 35.0 * DEG]],
        [[-70.0 * DEG, 25.0 * DEG], [-20.0 * DEG, 20.0 * DEG], [-35.0 * DEG, 5.0 * DEG]],
        sym(15.0, 15.0, 10.0),
        [[0.0, 100.0 * DEG], [0.0, 0.0], [0.0, 0.0]],
        [[0.0, 100.0 * DEG], [0.0, 0.0], [0.0, 0.0]],
        sym(10.0, 15.0, 10.0),
        sym(20.0, 5.0, 10.0),
        sym(20.0, 5.0, 10.0),
        sym(10.0, 15.0, 10.0),
        sym(0.0, 0.0, 0.0),
        sym(0.0, 0.0, 0.0),
        sym(25.0, 20.0, 10.0),
        [[0.0, 0.0], [-10.0 * DEG, 10.0 * DEG], [-5.0 * DEG, 15.0 * DEG]],
        [[0.0, 0.0], [-10.0 * DEG, 10.0 * DEG], [-15.0 * DEG, 5.0 * DEG]],
        sym(20.0, 30.0, 15.0),
        [[-30.0 * DEG, 30.0 * DEG], [-50.0 * DEG, 40.0 * DEG], [-75.0 * DEG, 30.0 * DEG]],
        [[-30.0 * DEG, 30.0 * DEG], [-40.0 * DEG, 50.0 * DEG], [-30.0 * DEG, 75.0 * DEG]],
        [[0.0, 0.0], [-110.0 * DEG, 0.0], [0.0, 0.0]],
        [[0.0, 0.0], [0.0, 110.0 * DEG], [0.0, 0.0]],
        sym(20.0, 10.0, 25.0),
        sym(20.0, 10.0, 25.0),
        sym(0.0, 0.0, 0.0),
        sym(0.0, 0.0, 0.0),
    ];
    (0..joints).map(|j| table.get(j).copied().unwrap_or([[0.0; 2]; 3])).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub size: usize,
    pub seed: u64,
    pub image_size: usize,
    /// Side of the part-label map; matches the network's part-map size.
    pub label_size: usize,
    pub num_joints: usize,
    pub body_model: BodyModelSource,
    pub use_posedirs: bool,
    /// Per joint; empty means the built-in anatomical defaults.
    pub pose_limits: Vec<JointLimits>,
    pub beta_std: f64,
    /// Shape coefficients are clipped to ±`beta_clip`.
    pub beta_clip: f64,
    /// Fraction of the image span covered by the body's larger extent.
    pub fill_range: [f64; 2],
    /// Body centre offset as a fraction of the free margin, uniform in ±this.
    pub offset_range: f64,
    pub synth_occ: SynthOccConfig,
    pub rand_crop: RandCropConfig,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            size: 2000,
            seed: 0,
            image_size: 64,
            label_size: 32,
            num_joints: 24,
            body_model: BodyModelSource::Toy { seed: 0, vertices: 1200, betas: 10 },
            use_posedirs: false,
            pose_limits: Vec::new(),
            beta_std: 1.0,
            beta_clip: 2.0,
            fill_range: [0.6, 0.9],
            offset_range: 0.8,
            synth_occ: SynthOccConfig::default(),
            rand_crop: RandCropConfig::default(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.size == 0 {
            return bad("dataset size must be ≥ 1".into());
        }
        if self.image_size < 2 || self.label_size < 2 {
            return bad("image_size and label_size must be ≥ 2".into());
        }
        if !self.pose_limits.is_empty() && self.pose_limits.len() != self.num_joints {
            return bad(format!("{} pose limits for {} joints", self.pose_limits.len(), self.num_joints));
        }
        for (j, lim) in self.pose_limits.iter().enumerate() {
            if lim.iter().any(|[lo, hi]| !lo.is_finite() || !hi.is_finite() || lo > hi) {
                return bad(format!("pose limits of joint {j} are not finite ordered intervals"));
            }
        }
        let [f0, f1] = self.fill_range;
        if !(f0 > 0.0 && f0 <= f1 && f1 <= 1.0) {
            return bad("fill_range must satisfy 0 < lo ≤ hi ≤ 1".into());
        }
        if !(self.beta_std >= 0.0 && self.beta_clip >= 0.0 && self.beta_std.is_finite() && self.beta_clip.is_finite()) {
            return bad("beta_std and beta_clip must be finite and ≥ 0".into());
        }
        if !(0.0..=1.0).contains(&self.offset_range) {
            return bad("offset_range must lie in [0, 1]".into());
        }
        self.synth_occ.validate()?;
        self.rand_crop.validate()
    }

    pub fn limits(&self) -> Vec<JointLimits> {
        if self.pose_limits.is_empty() {
            default_pose_limits(self.num_joints)
        } else {
            self.pose_limits.clone()
        }
    }

    pub fn load_body_model(&self) -> Result<BodyModelDef> {
        self.body_model.load(self.num_joints)
    }

    /// Same spec with another size and seed, e.g. for a held-out split.
    pub fn split(&self, size: usize, seed: u64) -> Self {
        Self { size, seed, ..self.clone() }
    }
}

/// Pose, shape and camera of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyState {
    pub rotmats: Vec<Matrix3<f64>>,
    pub betas: Vec<f64>,
    pub camera: WeakPerspectiveCamera,
}

fn euler(angles: [f64; 3]) -> Matrix3<f64> {
    rot_z(angles[2]) * rot_y(angles[1]) * rot_x(angles[0])
}

/// Draws the state of sample `index`; a function of `(spec.seed, index)` only.
pub fn sample_state(spec: &DatasetSpec, model: &BodyModelDef, index: u64) -> Result<BodyState> {
    if index >= spec.size as u64 {
        return Err(CoreError::Data(format!("index {index} out of range for a dataset of {}", spec.size)));
    }
    let mut rng = rng::stream(spec.seed, index, "body-state");
    let limits = spec.limits();
    let mut rotmats: Vec<Matrix3<f64>> = limits
        .iter()
        .map(|lim| {
            let a = lim.map(|[lo, hi]| if hi > lo { rng.gen_range(lo..hi) } else { lo });
            euler(a)
        })
        .collect();
    rotmats[0] = root_init_rotation() * rotmats[0];
    let betas: Vec<f64> = (0..model.num_betas())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (z * spec.beta_std).clamp(-spec.beta_clip, spec.beta_clip)
        })
        .collect();

    // frame the posed mesh: its larger extent covers `fill` of the image span
    let posed = lbs_rotmats(model, &rotmats, &betas, spec.use_posedirs)?;
    let (mut lo, mut hi) = (posed.vertices[0], posed.vertices[0]);
    for p in &posed.vertices {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let [f0, f1] = spec.fill_range;
    let fill = if f1 > f0 { rng.gen_range(f0..f1) } else { f0 };
    let extent = (hi.x - lo.x).max(hi.y - lo.y).max(1e-9);
    let s = 2.0 * fill / extent;
    let mut t = [0.0; 2];
    for (a, ti) in t.iter_mut().enumerate() {
        let centre = 0.5 * (lo[a] + hi[a]) * s;
        let margin = 1.0 - 0.5 * (hi[a] - lo[a]) * s;
        let off = if spec.offset_range > 0.0 && margin > 0.0 {
            rng.gen_range(-1.0..1.0) * spec.offset_range * margin
        } else {
            0.0
        };
        *ti = off - centre;
    }
    Ok(BodyState { rotmats, betas, camera: WeakPerspectiveCamera::new(s, t) })
}

/// Rest pose, mean shape, body centered with its larger extent covering
/// `fill` of the image span.
pub fn rest_state(model: &BodyModelDef, fill: f64) -> Result<BodyState> {
    let mut rotmats = vec![Matrix3::identity(); model.num_joints()];
    rotmats[0] = root_init_rotation();
    let betas = vec![0.0; model.num_betas()];
    let posed = lbs_rotmats(model, &rotmats, &betas, false)?;
    let (mut lo, mut hi) = (posed.vertices[0], posed.vertices[0]);
    for p in &posed.vertices {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let s = 2.0 * fill / (hi.x - lo.x).max(hi.y - lo.y).max(1e-9);
    let t = [-0.5 * (lo.x + hi.x) * s, -0.5 * (lo.y + hi.y) * s];
    Ok(BodyState { rotmats, betas, camera: WeakPerspectiveCamera::new(s, t) })
}

/// One training or test example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub seed: u64,
    pub index: u64,
    pub image: Image,
    /// Axis-angle rotation per joint.
    pub pose: Vec<[f64; 3]>,
    pub betas: Vec<f64>,
    pub scale: f64,
    pub trans: [f64; 2],
    pub joints3d: Vec<Vector3<f64>>,
    /// Normalized image coordinates.
    pub joints2d: Vec<[f64; 2]>,
    /// 2D supervision weight per joint.
    pub confidence: Vec<f64>,
    /// In the image and not hidden behind other parts.
    pub visibility: Vec<bool>,
    pub label_size: usize,
    /// Row-major `label_size²` part labels, 0 = background.
    pub part_labels: Vec<u32>,
}

impl Sample {
    pub fn camera(&self) -> WeakPerspectiveCamera {
        WeakPerspectiveCamera::new(self.scale, self.trans)
    }

    pub fn rotmats(&self) -> Vec<Matrix3<f64>> {
        Pose::AxisAngle(self.pose.clone()).to_rotmats().expect("axis-angle never fails")
    }

    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.part_labels[row * self.label_size + col]
    }

    /// Joints in pixel coordinates of an image of side `size`.
    pub fn joints2d_px(&self, size: usize) -> Vec<[f64; 2]> {
        self.joints2d.iter().map(|p| p.map(|u| ndc_to_pixel(u, size))).collect()
    }
}

/// Shared, per-dataset rendering inputs.
pub struct Renderer {
    pub model: BodyModelDef,
    face_labels: Vec<u32>,
    palette: Vec<[f64; 3]>,
    /// Vertices that define each joint.
    joint_support: Vec<Vec<usize>>,
}

impl Renderer {
    pub fn new(model: BodyModelDef) -> Self {
        let (k, v) = (model.num_joints(), model.num_vertices());
        let reg = model.joint_regressor().data();
        let joint_support = (0..k).map(|j| (0..v).filter(|&i| reg[j * v + i] != 0.0).collect()).collect();
        Self { face_labels: face_part_labels(&model), palette: part_palette(k), joint_support, model }
    }

    pub fn palette(&self) -> &[[f64; 3]] {
        &self.palette
    }

    pub fn face_labels(&self) -> &[u32] {
        &self.face_labels
    }

    /// Renders the sample at `index` from its drawn state.
    pub fn make_sample(&self, spec: &DatasetSpec, index: u64) -> Result<Sample> {
        let state = sample_state(spec, &self.model, index)?;
        self.render_state(spec, index, &state)
    }

    pub fn render_state(&self, spec: &DatasetSpec, index: u64, state: &BodyState) -> Result<Sample> {
        let model = &self.model;
        let posed = lbs_rotmats(model, &state.rotmats, &state.betas, spec.use_posedirs)?;
        let joints3d = model.regress_joints(&posed.vertices);
        let cam = &state.camera;
        let joints2d = cam.project_all(&joints3d);
        let s = spec.image_size;
        let full = rasterize(&posed.vertices, model.faces(), &self.face_labels, cam, s, s);
        let labels = rasterize(&posed.vertices, model.faces(), &self.face_labels, cam, spec.label_size, spec.label_size);
        let background = noise_background(spec.seed, index, s, s);
        let shading = shading_jitter(spec.seed, index, model.num_joints() + 1);
        let image = render_sample_image(&full, &self.palette, &background, &shading);
        // a joint is visible when some vertex defining it is seen at its own
        // pixel of the label raster, carrying the joint's part label
        let l = spec.label_size;
        let px = project_to_pixels(&posed.vertices, cam, l, l);
        let visibility = joints2d
            .iter()
            .zip(&self.joint_support)
            .enumerate()
            .map(|(j, (p, support))| {
                p.iter().all(|u| (-1.0..=1.0).contains(u))
                    && support.iter().any(|&v| {
                        let (col, row) = (px[v][0].round(), px[v][1].round());
                        labels.vertex_visible[v]
                            && (0.0..l as f64).contains(&col)
                            && (0.0..l as f64).contains(&row)
                            && labels.label(row as usize, col as usize) == j as u32 + 1
                    })
            })
            .collect();
        let confidence = joints2d.iter().map(|p| if p.iter().all(|u| (-1.0..=1.0).contains(u)) { 1.0 } else { 0.0 }).collect();
        Ok(Sample {
            seed: spec.seed,
            index,
            image,
            pose: state.rotmats.iter().map(matrix_to_axis_angle).collect(),
            betas: state.betas.clone(),
            scale: cam.s,
            trans: cam.t,
            joints3d,
            joints2d,
            confidence,
            visibility,
            label_size: spec.label_size,
            part_labels: labels.label_map,
        })
    }
}

/// Renders every sample of `spec`, in index order.
pub fn generate(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let renderer = Renderer::new(spec.load_body_model()?);
    use rayon::prelude::*;
    (0..spec.size as u64).into_par_iter().map(|i| renderer.make_sample(spec, i)).collect()
}
