//! Procedural stand-in for a full body model: one capsule per joint on the
//! standard 24-joint skeleton (truncated for smaller K).

use nalgebra::Vector3;
use parelab_numerics::Tensor;
use rand_distr::{Distribution, StandardNormal};

use super::BodyModelDef;
use crate::error::{model_err, Result};
use crate::rng;

/// Parent of each joint on the standard 24-joint skeleton, `-1` for the root.
pub const SMPL_PARENTS: [i32; 24] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

const NAMES: [&str; 24] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

pub fn part_names(k: usize) -> Vec<String> {
    (0..k)
        .map(|i| NAMES.get(i).map_or_else(|| format!("joint{i}"), |s| s.to_string()))
        .collect()
}

/// T-pose, meters, y up, body facing +z, left side on +x.
const JOINTS: [[f64; 3]; 24] = [
    [0.0, 0.0, 0.0],
    [0.09, -0.08, 0.0],
    [-0.09, -0.08, 0.0],
    [0.0, 0.08, 0.0],
    [0.10, -0.46, 0.0],
    [-0.10, -0.46, 0.0],
    [0.0, 0.20, 0.0],
    [0.10, -0.78, 0.0],
    [-0.10, -0.78, 0.0],
    [0.0, 0.32, 0.0],
    [0.10, -0.93, 0.03],
    [-0.10, -0.93, 0.03],
    [0.0, 0.48, 0.0],
    [0.05, 0.50, 0.0],
    [-0.05, 0.50, 0.0],
    [0.0, 0.61, 0.0],
    [0.20, 0.46, 0.0],
    [-0.20, 0.46, 0.0],
    [0.46, 0.46, 0.0],
    [-0.46, 0.46, 0.0],
    [0.66, 0.46, 0.0],
    [-0.66, 0.46, 0.0],
    [0.78, 0.46, 0.0],
    [-0.78, 0.46, 0.0],
];

/// Far end of each part's capsule axis.
const TIPS: [[f64; 3]; 24] = [
    [0.0, -0.12, 0.0],
    [0.10, -0.46, 0.0],
    [-0.10, -0.46, 0.0],
    [0.0, 0.20, 0.0],
    [0.10, -0.78, 0.0],
    [-0.10, -0.78, 0.0],
    [0.0, 0.32, 0.0],
    [0.10, -0.92, 0.0],
    [-0.10, -0.92, 0.0],
    [0.0, 0.46, 0.0],
    [0.11, -0.94, 0.18],
    [-0.11, -0.94, 0.18],
    [0.0, 0.60, 0.0],
    [0.20, 0.48, 0.0],
    [-0.20, 0.48, 0.0],
    [0.0, 0.77, 0.0],
    [0.46, 0.46, 0.0],
    [-0.46, 0.46, 0.0],
    [0.66, 0.46, 0.0],
    [-0.66, 0.46, 0.0],
    [0.78, 0.46, 0.0],
    [-0.78, 0.46, 0.0],
    [0.90, 0.46, 0.0],
    [-0.90, 0.46, 0.0],
];

const RADII: [f64; 24] = [
    0.14, 0.08, 0.08, 0.14, 0.07, 0.07, 0.15, 0.07, 0.07, 0.16, 0.055, 0.055, 0.06, 0.065, 0.065, 0.11,
    0.065, 0.065, 0.06, 0.06, 0.06, 0.06, 0.055, 0.055,
];

/// Pole offset beyond each capsule end, in radii.
const POLE: f64 = 0.5;
/// Distance scale of the blend between a part and its nearest neighbor bone.
const BLEND_WIDTH: f64 = 0.02;
/// Maximum vertex displacement of a unit-norm shape vector, relative to height.
const SHAPE_EXTENT: f64 = 0.05;

struct Segment {
    a: Vector3<f64>,
    b: Vector3<f64>,
    radius: f64,
}

impl Segment {
    fn closest(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = self.b - self.a;
        let t = ((p - self.a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
        self.a + t * d
    }

    fn distance(&self, p: &Vector3<f64>) -> f64 {
        (p - self.closest(p)).norm()
    }
}

/// Ring/slice layout of one part's vertex budget.
struct Layout {
    slices: usize,
    rings: usize,
    poles: bool,
}

fn layout(n: usize) -> Layout {
    for s in (3..=8).rev() {
        if n >= 2 + 2 * s {
            return Layout { slices: s, rings: (n - 2) / s, poles: true };
        }
    }
    if n >= 5 {
        Layout { slices: n - 2, rings: 1, poles: true }
    } else {
        Layout { slices: n, rings: 1, poles: false }
    }
}

/// Builds a toy model with `v` vertices, `k ≤ 24` joints and `b` shape coefficients.
pub fn generate_toy_model(seed: u64, v: usize, k: usize, b: usize) -> Result<BodyModelDef> {
    if !(4..=24).contains(&k) {
        return Err(model_err("parents", format!("toy skeleton supports 4..=24 joints, got {k}")));
    }
    if v < 4 * k {
        return Err(model_err("v_template", format!("need at least {} vertices for {k} parts, got {v}", 4 * k)));
    }
    if b == 0 {
        return Err(model_err("shapedirs", "need at least one shape coefficient"));
    }
    let segs: Vec<Segment> = (0..k)
        .map(|j| Segment {
            a: Vector3::from(JOINTS[j]),
            b: Vector3::from(TIPS[j]),
            radius: RADII[j],
        })
        .collect();
    let parents: Vec<Option<usize>> = SMPL_PARENTS[..k].iter().map(|&p| (p >= 0).then_some(p as usize)).collect();

    let mut verts: Vec<Vector3<f64>> = Vec::with_capacity(v);
    let mut owner: Vec<usize> = Vec::with_capacity(v);
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut ring0 = Vec::with_capacity(k);
    for (j, seg) in segs.iter().enumerate() {
        let n = v / k + usize::from(j < v % k);
        let first = verts.len();
        let Layout { slices, rings, poles } = layout(n);
        let axis = (seg.b - seg.a).normalize();
        let helper = if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let u = axis.cross(&helper).normalize();
        let w = axis.cross(&u);
        for r in 0..rings {
            let t = if rings > 1 { r as f64 / (rings - 1) as f64 } else { 0.0 };
            let c = seg.a + t * (seg.b - seg.a);
            for s in 0..slices {
                let phi = 2.0 * std::f64::consts::PI * s as f64 / slices as f64;
                verts.push(c + seg.radius * (phi.cos() * u + phi.sin() * w));
            }
        }
        let ring = |r: usize, s: usize| (first + r * slices + s % slices) as u32;
        for r in 0..rings.saturating_sub(1) {
            for s in 0..slices {
                faces.push([ring(r, s), ring(r, s + 1), ring(r + 1, s + 1)]);
                faces.push([ring(r, s), ring(r + 1, s + 1), ring(r + 1, s)]);
            }
        }
        if poles {
            let bottom = verts.len() as u32;
            verts.push(seg.a - POLE * seg.radius * axis);
            let top = verts.len() as u32;
            let tip = if rings > 1 { seg.b } else { seg.a };
            verts.push(tip + POLE * seg.radius * axis);
            for s in 0..slices {
                faces.push([bottom, ring(0, s + 1), ring(0, s)]);
                faces.push([top, ring(rings - 1, s), ring(rings - 1, s + 1)]);
            }
        } else {
            for s in 1..slices - 1 {
                faces.push([ring(0, 0), ring(0, s), ring(0, s + 1)]);
            }
        }
        // leftover budget sits on the axis and belongs to no face
        while verts.len() < first + n {
            verts.push(0.5 * (seg.a + seg.b));
        }
        owner.extend(std::iter::repeat(j).take(n));
        ring0.push((first..first + slices).collect::<Vec<_>>());
    }

    let mut children = vec![Vec::new(); k];
    for (j, p) in parents.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(j);
        }
    }
    let mut weights = vec![0.0; v * k];
    for (i, p) in verts.iter().enumerate() {
        let own = owner[i];
        let d_own = segs[own].distance(p);
        let mut best: Option<(f64, usize)> = None;
        for q in parents[own].into_iter().chain(children[own].iter().copied()) {
            let d = segs[q].distance(p);
            if best.map_or(true, |(bd, bq)| d < bd || (d == bd && q < bq)) {
                best = Some((d, q));
            }
        }
        let mut w_other = 0.0;
        if let Some((d, q)) = best {
            w_other = 0.5 * (-(d - d_own).max(0.0) / BLEND_WIDTH).exp();
            if w_other < 1e-6 {
                w_other = 0.0;
            }
            weights[i * k + q] = w_other;
        }
        weights[i * k + own] = 1.0 - w_other;
    }

    let mut regressor = vec![0.0; k * v];
    for (j, ring) in ring0.iter().enumerate() {
        let share = 1.0 / ring.len() as f64;
        for &i in ring {
            regressor[j * v + i] = share;
        }
    }

    let shapedirs = shape_basis(seed, &verts, &owner, &segs, &weights, k, b);
    let v_template = Tensor::new([v, 3], verts.iter().flat_map(|p| [p.x, p.y, p.z]).collect())?;
    BodyModelDef::new(
        v_template,
        shapedirs,
        None,
        Tensor::new([v, k], weights)?,
        parents,
        faces,
        Tensor::new([k, v], regressor)?,
    )
}

/// Smooth random fields: an anisotropic scaling about the pelvis plus a
/// skinning-weighted radial thickness change, jointly normalized.
fn shape_basis(
    seed: u64,
    verts: &[Vector3<f64>],
    owner: &[usize],
    segs: &[Segment],
    weights: &[f64],
    k: usize,
    b: usize,
) -> Tensor {
    let v = verts.len();
    let mut rng = rng::stream(seed, 0, "toy-shapedirs");
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut dirs = vec![0.0; v * 3 * b];
    for basis in 0..b {
        let scale = Vector3::new(gauss(), gauss(), gauss());
        let thick: Vec<f64> = (0..k).map(|_| 3.0 * gauss()).collect();
        for (i, p) in verts.iter().enumerate() {
            let radial = p - segs[owner[i]].closest(p);
            let t: f64 = (0..k).map(|j| weights[i * k + j] * thick[j]).sum();
            let d = scale.component_mul(p) + t * radial;
            for c in 0..3 {
                dirs[(i * 3 + c) * b + basis] = d[c];
            }
        }
    }
    let height = {
        let (lo, hi) = verts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.y), h.max(p.y)));
        hi - lo
    };
    let worst = (0..v)
        .map(|i| dirs[i * 3 * b..(i + 1) * 3 * b].iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let k_norm = SHAPE_EXTENT * height / worst;
    dirs.iter_mut().for_each(|x| *x *= k_norm);
    Tensor::new([v, 3, b], dirs).expect("shape basis dims")
}
