//! The part-attention regressor and the global-average-pooling baseline.

use nalgebra::{Matrix3, Vector3};
use parelab_numerics::init::scaled_uniform;
use parelab_numerics::{Container, ParamId, ParamStore, Tape, Tensor, Var};
use serde_json::Value;

use super::config::{Architecture, NetConfig, SamplingMode};
use super::fusion::{attention_fuse, pooling_fuse};
use super::layers::{Conv, ConvBnRelu, Linear, Mode};
use crate::body_model::rotation::{matrix_to_rot6d, rot_x};
use crate::body_model::{lbs_tape, rot6d_to_matrix_tape, BodyModelDef, BodyTensors};
use crate::error::{CoreError, Result};
use crate::render::camera::{ndc_to_pixel, project_tape};
use crate::render::Image;
use crate::rng;

const SCALE_FLOOR: f64 = 1e-4;
const HEAD_GAIN: f64 = 0.01;

/// Rotation of the root in the initial (mean) pose: a half turn about x so
/// the body's up axis points to image-up under the y-down image convention.
pub fn root_init_rotation() -> Matrix3<f64> {
    rot_x(std::f64::consts::PI)
}

fn init_pose6d(j: usize) -> Vec<f64> {
    let root = matrix_to_rot6d(&root_init_rotation());
    let ident = matrix_to_rot6d(&Matrix3::identity());
    (0..j).flat_map(|k| if k == 0 { root } else { ident }).collect()
}

fn softplus_inv(y: f64) -> f64 {
    y.exp_m1().ln()
}

struct Branch {
    blocks: Vec<ConvBnRelu>,
    out: Conv,
}

impl Branch {
    fn new<R: rand::Rng>(store: &mut ParamStore, name: &str, cin: usize, widths: &[usize], cout: usize, rng: &mut R) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut c = cin;
        for (i, &w) in widths.iter().enumerate() {
            blocks.push(ConvBnRelu::new(store, &format!("{name}.up{i}"), c, w, 1, rng)?);
            c = w;
        }
        let out = Conv::new(store, &format!("{name}.out"), c, cout, 1, 1, true, rng)?;
        Ok(Self { blocks, out })
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: &mut Mode) -> Result<Var> {
        let mut y = x;
        for b in &self.blocks {
            y = tape.upsample2x(y)?;
            y = b.forward(tape, store, y, mode)?;
        }
        self.out.forward(tape, store, y)
    }
}

struct PareHead {
    parts: Branch,
    feats: Branch,
    /// [J, C, 6], one independent linear map per joint.
    pose_w: ParamId,
    /// [J, 6]
    pose_b: ParamId,
    /// Flattened per-joint features → (β, camera).
    shape_cam: Linear,
}

struct GapHead {
    fc1: Linear,
    fc2: Linear,
    out: Linear,
    init: Tensor,
}

enum Head {
    Pare(PareHead),
    Gap(GapHead),
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// [N, J, 6]
    pub theta6d: Var,
    /// [N, J, 3, 3]
    pub rotmats: Var,
    /// [N, B]
    pub betas: Var,
    /// [N, 1]
    pub scale: Var,
    /// [N, 2]
    pub trans: Var,
    /// [N, J+1, H, W] part logits.
    pub parts: Option<Var>,
    /// [N, J, H·W] spatial attention.
    pub attention: Option<Var>,
    /// [N, C_bb, h, w]
    pub backbone: Var,
}

/// Mesh, 3D joints and projected joints on the tape.
#[derive(Clone, Copy, Debug)]
pub struct Posed {
    /// [N, V, 3]
    pub vertices: Var,
    /// [N, K, 3]
    pub joints3d: Var,
    /// [N, K, 2], normalized image coordinates.
    pub joints2d: Var,
}

/// Plain-value prediction for one image.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub theta6d: Vec<[f64; 6]>,
    pub rotmats: Vec<Matrix3<f64>>,
    pub betas: Vec<f64>,
    pub scale: f64,
    pub trans: [f64; 2],
    pub vertices: Vec<Vector3<f64>>,
    pub joints3d: Vec<Vector3<f64>>,
    /// Normalized coordinates.
    pub joints2d: Vec<[f64; 2]>,
    /// Argmax of the part logits, H×W, when the model has a part branch.
    pub part_labels: Option<Vec<u32>>,
    /// Softmax over channels of the part logits, (J+1)×H×W.
    pub part_probs: Option<Vec<f64>>,
}

impl Prediction {
    pub fn joints2d_px(&self, image_size: usize) -> Vec<[f64; 2]> {
        self.joints2d.iter().map(|p| p.map(|u| ndc_to_pixel(u, image_size))).collect()
    }
}

pub struct Network {
    config: NetConfig,
    store: ParamStore,
    body: BodyModelDef,
    body_tensors: BodyTensors,
    backbone: Vec<ConvBnRelu>,
    head: Head,
}

impl Network {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let body = config.body_model.load(config.num_joints)?;
        Self::with_body(config, body, seed)
    }

    pub fn with_body(config: NetConfig, body: BodyModelDef, seed: u64) -> Result<Self> {
        config.validate()?;
        if body.num_joints() != config.num_joints {
            return Err(CoreError::Config(format!(
                "body model has {} joints, config expects {}",
                body.num_joints(),
                config.num_joints
            )));
        }
        let mut rng = rng::stream(seed, 0, "net-init");
        let mut store = ParamStore::new();
        let mut backbone = Vec::new();
        let mut c = 3;
        for (i, &w) in config.backbone_channels.iter().enumerate() {
            backbone.push(ConvBnRelu::new(&mut store, &format!("backbone.s{i}.down"), c, w, 2, &mut rng)?);
            for d in 0..config.backbone_depth {
                backbone.push(ConvBnRelu::new(&mut store, &format!("backbone.s{i}.conv{d}"), w, w, 1, &mut rng)?);
            }
            c = w;
        }
        let (j, b) = (config.num_joints, body.num_betas());
        let cam_bias = [softplus_inv(config.init_scale - SCALE_FLOOR), 0.0, 0.0];
        let head = match config.architecture {
            Architecture::Pare => {
                let cf = config.feature_channels;
                let parts = Branch::new(&mut store, "part_branch", c, &config.branch_channels, j + 1, &mut rng)?;
                let feats = Branch::new(&mut store, "feature_branch", c, &config.branch_channels, cf, &mut rng)?;
                let pose_w = store.add("pose_head.weight", scaled_uniform([j, cf, 6], cf, HEAD_GAIN, &mut rng), true)?;
                let pose_b = store.add("pose_head.bias", Tensor::new([j, 6], init_pose6d(j))?, true)?;
                let bias: Vec<f64> = std::iter::repeat(0.0).take(b).chain(cam_bias).collect();
                let shape_cam = Linear::new(&mut store, "shape_cam_head", j * cf, b + 3, Some(HEAD_GAIN), Tensor::new([b + 3], bias)?, &mut rng)?;
                Head::Pare(PareHead { parts, feats, pose_w, pose_b, shape_cam })
            }
            Architecture::Gap => {
                let state = j * 6 + b + 3;
                let hdim = config.gap_hidden;
                let fc1 = Linear::new(&mut store, "gap.fc1", c + state, hdim, None, Tensor::zeros([hdim]), &mut rng)?;
                let fc2 = Linear::new(&mut store, "gap.fc2", hdim, hdim, None, Tensor::zeros([hdim]), &mut rng)?;
                let out = Linear::new(&mut store, "gap.out", hdim, state, Some(HEAD_GAIN), Tensor::zeros([state]), &mut rng)?;
                let init: Vec<f64> = init_pose6d(j).into_iter().chain(std::iter::repeat(0.0).take(b)).chain(cam_bias).collect();
                Head::Gap(GapHead { fc1, fc2, out, init: Tensor::new([1, state], init)? })
            }
        };
        let body_tensors = BodyTensors::new(&body, config.use_posedirs);
        Ok(Self { config, store, body, body_tensors, backbone, head })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn body(&self) -> &BodyModelDef {
        &self.body
    }

    pub fn has_part_branch(&self) -> bool {
        matches!(self.head, Head::Pare(_))
    }

    /// Name of the final 1×1 part-logit convolution weight.
    pub fn part_output_weight(&self) -> Option<ParamId> {
        match &self.head {
            Head::Pare(h) => Some(h.parts.out.weight),
            Head::Gap(_) => None,
        }
    }

    /// `images` is [N, 3, S, S].
    pub fn backbone_forward(&self, tape: &mut Tape, images: Var, mode: &mut Mode) -> Result<Var> {
        let s = tape.shape(images).to_vec();
        let size = self.config.image_size;
        if s.len() != 4 || s[1] != 3 || s[2] != size || s[3] != size {
            return Err(CoreError::Shape {
                op: "backbone",
                detail: format!("expected [N,3,{size},{size}], got {s:?}"),
            });
        }
        let mut y = images;
        for b in &self.backbone {
            y = b.forward(tape, &self.store, y, mode)?;
        }
        Ok(y)
    }

    pub fn forward(&self, tape: &mut Tape, images: Var, mode: &mut Mode) -> Result<Forward> {
        let feat = self.backbone_forward(tape, images, mode)?;
        self.head_forward(tape, feat, mode)
    }

    /// Everything after the backbone.
    pub fn head_forward(&self, tape: &mut Tape, feat: Var, mode: &mut Mode) -> Result<Forward> {
        let n = tape.shape(feat)[0];
        let (j, b) = (self.config.num_joints, self.body.num_betas());
        let store = &self.store;
        let (theta6d, shape_cam, parts, attention) = match &self.head {
            Head::Pare(h) => {
                let p = h.parts.forward(tape, store, feat, mode)?;
                let f = h.feats.forward(tape, store, feat, mode)?;
                let (fused, att) = match self.config.sampling_mode {
                    SamplingMode::Attention => attention_fuse(tape, p, f)?,
                    SamplingMode::Pooling => pooling_fuse(tape, p, f)?,
                };
                // separate linear map per joint: [J,N,C] × [J,C,6]
                let per_joint = tape.permute(fused, &[1, 0, 2])?;
                let w = tape.param(store, h.pose_w);
                let pose = tape.bmm(per_joint, w)?;
                let pose = tape.permute(pose, &[1, 0, 2])?;
                let pb = tape.param(store, h.pose_b);
                let theta = tape.add(pose, pb)?;
                let flat = tape.flatten(fused, 1)?;
                let sc = h.shape_cam.forward(tape, store, flat)?;
                (theta, sc, Some(p), Some(att))
            }
            Head::Gap(g) => {
                let s = tape.shape(feat).to_vec();
                let pooled = tape.reshape(feat, &[s[0], s[1], s[2] * s[3]])?;
                let pooled = tape.mean_axis(pooled, 2, false)?;
                let init = tape.constant(g.init.broadcast_to(&[n, g.init.shape()[1]])?);
                let mut state = init;
                for _ in 0..self.config.gap_iterations {
                    let x = tape.concat(&[pooled, state], 1)?;
                    let h1 = g.fc1.forward(tape, store, x)?;
                    let h1 = tape.relu(h1);
                    let h2 = g.fc2.forward(tape, store, h1)?;
                    let h2 = tape.relu(h2);
                    let delta = g.out.forward(tape, store, h2)?;
                    state = tape.add(state, delta)?;
                }
                let theta = tape.narrow(state, 1, 0, j * 6)?;
                let theta = tape.reshape(theta, &[n, j, 6])?;
                let sc = tape.narrow(state, 1, j * 6, b + 3)?;
                (theta, sc, None, None)
            }
        };
        let betas = tape.narrow(shape_cam, 1, 0, b)?;
        let raw_s = tape.narrow(shape_cam, 1, b, 1)?;
        let sp = tape.softplus(raw_s);
        let scale = tape.add_scalar(sp, SCALE_FLOOR);
        let trans = tape.narrow(shape_cam, 1, b + 1, 2)?;
        let flat6 = tape.reshape(theta6d, &[n * j, 6])?;
        let rot = rot6d_to_matrix_tape(tape, flat6)?;
        let rotmats = tape.reshape(rot, &[n, j, 3, 3])?;
        Ok(Forward { theta6d, rotmats, betas, scale, trans, parts, attention, backbone: feat })
    }

    /// Poses the body model and projects its joints.
    pub fn pose(&self, tape: &mut Tape, fwd: &Forward) -> Result<Posed> {
        let out = lbs_tape(tape, &self.body_tensors, fwd.rotmats, fwd.betas)?;
        let joints2d = project_tape(tape, out.joints, fwd.scale, fwd.trans)?;
        Ok(Posed { vertices: out.vertices, joints3d: out.joints, joints2d })
    }

    /// Stacks images into a [N,3,S,S] tensor.
    pub fn batch_tensor(&self, images: &[&Image]) -> Result<Tensor> {
        let s = self.config.image_size;
        let mut data = Vec::with_capacity(images.len() * 3 * s * s);
        for img in images {
            if img.height != s || img.width != s {
                return Err(CoreError::Shape { op: "predict", detail: format!("image {}×{}, network expects {s}×{s}", img.height, img.width) });
            }
            data.extend(img.to_chw());
        }
        Ok(Tensor::new([images.len(), 3, s, s], data)?)
    }

    /// Eval-mode inference.
    pub fn predict(&self, images: &[&Image]) -> Result<Vec<Prediction>> {
        let mut tape = Tape::new();
        let x = tape.constant(self.batch_tensor(images)?);
        let fwd = self.forward(&mut tape, x, &mut Mode::eval())?;
        let posed = self.pose(&mut tape, &fwd)?;
        Ok(self.collect(&mut tape, &fwd, &posed))
    }

    fn collect(&self, tape: &mut Tape, fwd: &Forward, posed: &Posed) -> Vec<Prediction> {
        let n = tape.shape(fwd.theta6d)[0];
        let (j, b) = (self.config.num_joints, self.body.num_betas());
        let v = self.body.num_vertices();
        let k = self.body.num_joints();
        let probs = fwd.parts.map(|p| {
            let sm = tape.softmax(p, 1).expect("4-D part logits");
            tape.value(sm).clone()
        });
        let vec3 = |d: &[f64]| Vector3::new(d[0], d[1], d[2]);
        (0..n)
            .map(|i| {
                let th = &tape.value(fwd.theta6d).data()[i * j * 6..(i + 1) * j * 6];
                let rm = &tape.value(fwd.rotmats).data()[i * j * 9..(i + 1) * j * 9];
                let (part_labels, part_probs) = match &probs {
                    None => (None, None),
                    Some(p) => {
                        let s = p.shape();
                        let (c, hw) = (s[1], s[2] * s[3]);
                        let d = &p.data()[i * c * hw..(i + 1) * c * hw];
                        let labels = (0..hw)
                            .map(|q| {
                                let mut best = 0;
                                for ch in 1..c {
                                    if d[ch * hw + q] > d[best * hw + q] {
                                        best = ch;
                                    }
                                }
                                best as u32
                            })
                            .collect();
                        (Some(labels), Some(d.to_vec()))
                    }
                };
                Prediction {
                    theta6d: th.chunks(6).map(|c| c.try_into().unwrap()).collect(),
                    rotmats: rm.chunks(9).map(|c| Matrix3::from_row_slice(c)).collect(),
                    betas: tape.value(fwd.betas).data()[i * b..(i + 1) * b].to_vec(),
                    scale: tape.value(fwd.scale).data()[i],
                    trans: [tape.value(fwd.trans).data()[2 * i], tape.value(fwd.trans).data()[2 * i + 1]],
                    vertices: tape.value(posed.vertices).data()[i * v * 3..(i + 1) * v * 3].chunks(3).map(vec3).collect(),
                    joints3d: tape.value(posed.joints3d).data()[i * k * 3..(i + 1) * k * 3].chunks(3).map(vec3).collect(),
                    joints2d: tape.value(posed.joints2d).data()[i * k * 2..(i + 1) * k * 2].chunks(2).map(|c| [c[0], c[1]]).collect(),
                    part_labels,
                    part_probs,
                }
            })
            .collect()
    }

    pub fn to_container(&self, with_optimizer: bool) -> Container {
        let mut c = self.store.to_container(&self.config.hash(), with_optimizer);
        c.meta.insert("net_config".into(), serde_json::to_value(&self.config).expect("config serializes"));
        c
    }

    /// Rebuilds a network from a checkpoint written by [`Network::to_container`].
    pub fn from_container(c: &Container) -> Result<Self> {
        let cfg: NetConfig = serde_json::from_value(c.meta.get("net_config").cloned().unwrap_or(Value::Null))
            .map_err(|e| CoreError::Config(format!("checkpoint network config: {e}")))?;
        if cfg.hash() != c.config_hash {
            return Err(CoreError::HashMismatch { expected: cfg.hash(), found: c.config_hash.clone() });
        }
        let mut net = Network::new(cfg, 0)?;
        net.store.load_container(c)?;
        Ok(net)
    }

    /// Loads a checkpoint, requiring it to match `expected`.
    pub fn from_container_checked(c: &Container, expected: &NetConfig) -> Result<Self> {
        if c.config_hash != expected.hash() {
            return Err(CoreError::HashMismatch { expected: expected.hash(), found: c.config_hash.clone() });
        }
        Self::from_container(c)
    }

    pub fn load_state(&mut self, c: &Container) -> Result<()> {
        if c.config_hash != self.config.hash() {
            return Err(CoreError::HashMismatch { expected: self.config.hash(), found: c.config_hash.clone() });
        }
        self.store.load_container(c)?;
        Ok(())
    }
}
