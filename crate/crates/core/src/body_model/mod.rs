//! Parametric body model: template mesh, shape basis, skinning weights,
//! kinematic tree and joint regressor, plus posing by linear blend skinning.

mod diff;
mod kinematics;
pub mod rotation;
mod toy;

use std::path::Path;

use nalgebra::Vector3;
use parelab_numerics::{Container, Tensor};

use crate::error::{model_err, Result};

pub use diff::{lbs_tape, rot6d_to_matrix_tape, BodyTensors};
pub use kinematics::{forward_kinematics, lbs, lbs_rotmats, LbsOutput};
pub use rotation::Pose;
pub use toy::{generate_toy_model, part_names, SMPL_PARENTS};

const NO_PARENT: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct BodyModelDef {
    v_template: Tensor,
    shapedirs: Tensor,
    posedirs: Option<Tensor>,
    weights: Tensor,
    parents: Vec<Option<usize>>,
    faces: Vec<[u32; 3]>,
    joint_regressor: Tensor,
    rest_joints: Tensor,
}

impl BodyModelDef {
    /// Validates every field and derives the rest joints.
    ///
    /// Shapes: `v_template` [V,3], `shapedirs` [V,3,B], `posedirs` [V,3,9(K-1)],
    /// `weights` [V,K], `joint_regressor` [K,V].
    pub fn new(
        v_template: Tensor,
        shapedirs: Tensor,
        posedirs: Option<Tensor>,
        weights: Tensor,
        parents: Vec<Option<usize>>,
        faces: Vec<[u32; 3]>,
        joint_regressor: Tensor,
    ) -> Result<Self> {
        let vs = v_template.shape();
        if vs.len() != 2 || vs[1] != 3 || vs[0] == 0 {
            return Err(model_err("v_template", format!("expected [V,3], got {vs:?}")));
        }
        let v = vs[0];
        let k = parents.len();
        if k == 0 {
            return Err(model_err("parents", "empty kinematic tree"));
        }
        let ss = shapedirs.shape();
        if ss.len() != 3 || ss[0] != v || ss[1] != 3 {
            return Err(model_err("shapedirs", format!("expected [{v},3,B], got {ss:?}")));
        }
        if let Some(p) = &posedirs {
            if p.shape() != [v, 3, 9 * (k - 1)] {
                return Err(model_err(
                    "posedirs",
                    format!("expected [{v},3,{}], got {:?}", 9 * (k - 1), p.shape()),
                ));
            }
        }
        if weights.shape() != [v, k] {
            return Err(model_err("weights", format!("expected [{v},{k}], got {:?}", weights.shape())));
        }
        for (i, row) in weights.data().chunks(k).enumerate() {
            if row.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                return Err(model_err("weights", format!("row {i} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-8 {
                return Err(model_err("weights", format!("row {i} sums to {s}")));
            }
        }
        if parents[0].is_some() {
            return Err(model_err("parents", "joint 0 must be the root"));
        }
        for (j, p) in parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                other => {
                    return Err(model_err(
                        "parents",
                        format!("joint {j} has parent {other:?}; parents must precede children"),
                    ))
                }
            }
        }
        if let Some((i, f)) = faces.iter().enumerate().find(|(_, f)| f.iter().any(|&x| x as usize >= v)) {
            return Err(model_err("faces", format!("face {i} {f:?} indexes past {v} vertices")));
        }
        if joint_regressor.shape() != [k, v] {
            return Err(model_err(
                "joint_regressor",
                format!("expected [{k},{v}], got {:?}", joint_regressor.shape()),
            ));
        }
        for (i, row) in joint_regressor.data().chunks(v).enumerate() {
            let s: f64 = row.iter().sum();
            if !((s - 1.0).abs() <= 1e-6) {
                return Err(model_err("joint_regressor", format!("row {i} sums to {s}")));
            }
        }
        for (name, t) in [("v_template", &v_template), ("shapedirs", &shapedirs)] {
            if !t.is_finite() {
                return Err(model_err(name, "non-finite entries"));
            }
        }
        let rest_joints = matmul_plain(&joint_regressor, &v_template);
        Ok(Self {
            v_template,
            shapedirs,
            posedirs,
            weights,
            parents,
            faces,
            joint_regressor,
            rest_joints,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.v_template.shape()[0]
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn num_betas(&self) -> usize {
        self.shapedirs.shape()[2]
    }

    pub fn v_template(&self) -> &Tensor {
        &self.v_template
    }

    pub fn shapedirs(&self) -> &Tensor {
        &self.shapedirs
    }

    pub fn posedirs(&self) -> Option<&Tensor> {
        self.posedirs.as_ref()
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn joint_regressor(&self) -> &Tensor {
        &self.joint_regressor
    }

    /// `W · v_template`, [K,3].
    pub fn rest_joints(&self) -> &Tensor {
        &self.rest_joints
    }

    pub fn vertex(&self, i: usize) -> Vector3<f64> {
        let d = &self.v_template.data()[3 * i..3 * i + 3];
        Vector3::new(d[0], d[1], d[2])
    }

    /// Vertical extent of the template.
    pub fn height(&self) -> f64 {
        let ys = self.v_template.data().iter().skip(1).step_by(3);
        let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &y| (l.min(y), h.max(y)));
        hi - lo
    }

    /// `W · mesh` for a V×3 mesh.
    pub fn regress_joints(&self, mesh: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let v = self.num_vertices();
        self.joint_regressor
            .data()
            .chunks(v)
            .map(|row| row.iter().zip(mesh).fold(Vector3::zeros(), |acc, (&w, p)| acc + w * p))
            .collect()
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("");
        c.push_f64("v_template", &self.v_template);
        c.push_f64("shapedirs", &self.shapedirs);
        if let Some(p) = &self.posedirs {
            c.push_f64("posedirs", p);
        }
        c.push_f64("weights", &self.weights);
        c.push_u32(
            "parents",
            vec![self.parents.len()],
            self.parents.iter().map(|p| p.map_or(NO_PARENT, |p| p as u32)).collect(),
        );
        c.push_u32("faces", vec![self.faces.len(), 3], self.faces.iter().flatten().copied().collect());
        c.push_f64("joint_regressor", &self.joint_regressor);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let f64_array = |name: &'static str| -> Result<Tensor> {
            c.get(name)
                .ok_or_else(|| model_err(name, "missing array"))?
                .to_tensor()
                .ok_or_else(|| model_err(name, "expected a f64 array"))
        };
        let u32_array = |name: &'static str| -> Result<(Vec<usize>, Vec<u32>)> {
            let a = c.get(name).ok_or_else(|| model_err(name, "missing array"))?;
            let d = a.as_u32().ok_or_else(|| model_err(name, "expected a u32 array"))?;
            Ok((a.shape.clone(), d.to_vec()))
        };
        let posedirs = match c.get("posedirs") {
            Some(_) => Some(f64_array("posedirs")?),
            None => None,
        };
        let (_, parents) = u32_array("parents")?;
        let (fshape, faces) = u32_array("faces")?;
        if fshape.len() != 2 || fshape[1] != 3 {
            return Err(model_err("faces", format!("expected [T,3], got {fshape:?}")));
        }
        Self::new(
            f64_array("v_template")?,
            f64_array("shapedirs")?,
            posedirs,
            f64_array("weights")?,
            parents.iter().map(|&p| (p != NO_PARENT).then_some(p as usize)).collect(),
            faces.chunks(3).map(|f| [f[0], f[1], f[2]]).collect(),
            f64_array("joint_regressor")?,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

/// Plain 2-D product of row-major tensors.
fn matmul_plain(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let (ad, bd) = (a.data(), b.data());
    Tensor::from_fn([m, n], |idx| {
        let (i, j) = (idx / n, idx % n);
        (0..k).map(|p| ad[i * k + p] * bd[p * n + j]).sum()
    })
}
