//! Reference (non-differentiable) posing on nalgebra types.

use nalgebra::{Matrix3, Matrix4, Vector3};

use super::rotation::Pose;
use super::BodyModelDef;
use crate::error::{shape_err, Result};

#[derive(Clone, Debug)]
pub struct LbsOutput {
    /// Posed mesh, V×3.
    pub vertices: Vec<Vector3<f64>>,
    /// Posed skeleton joints from forward kinematics, K×3.
    pub skeleton: Vec<Vector3<f64>>,
    /// Shaped rest joints `W · v_shaped`.
    pub shaped_rest_joints: Vec<Vector3<f64>>,
}

fn rigid(r: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

/// World transform of every joint: `G[k] = G[parent[k]] · [R_k | j_k − j_parent]`,
/// with the root placed at its rest joint.
pub fn forward_kinematics(
    model: &BodyModelDef,
    rotmats: &[Matrix3<f64>],
    shaped_rest_joints: &[Vector3<f64>],
) -> Result<Vec<Matrix4<f64>>> {
    let k = model.num_joints();
    if rotmats.len() != k || shaped_rest_joints.len() != k {
        return Err(shape_err(
            "forward_kinematics",
            format!("{} rotations and {} joints for a {k}-joint model", rotmats.len(), shaped_rest_joints.len()),
        ));
    }
    let mut world: Vec<Matrix4<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let g = match model.parents()[j] {
            None => rigid(&rotmats[j], &shaped_rest_joints[j]),
            Some(p) => world[p] * rigid(&rotmats[j], &(shaped_rest_joints[j] - shaped_rest_joints[p])),
        };
        world.push(g);
    }
    Ok(world)
}

/// Skinning transforms: world transforms with the rest joint removed.
fn skinning_transforms(world: &[Matrix4<f64>], rest: &[Vector3<f64>]) -> Vec<Matrix4<f64>> {
    world
        .iter()
        .zip(rest)
        .map(|(g, j)| {
            let mut a = *g;
            let r = g.fixed_view::<3, 3>(0, 0);
            let t = g.fixed_view::<3, 1>(0, 3) - r * j;
            a.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
            a
        })
        .collect()
}

pub fn lbs(model: &BodyModelDef, pose: &Pose, betas: &[f64], use_posedirs: bool) -> Result<LbsOutput> {
    lbs_rotmats(model, &pose.to_rotmats()?, betas, use_posedirs)
}

pub fn lbs_rotmats(
    model: &BodyModelDef,
    rotmats: &[Matrix3<f64>],
    betas: &[f64],
    use_posedirs: bool,
) -> Result<LbsOutput> {
    let (v, k, b) = (model.num_vertices(), model.num_joints(), model.num_betas());
    if betas.len() != b {
        return Err(shape_err("lbs", format!("{} betas for a {b}-coefficient shape basis", betas.len())));
    }
    if rotmats.len() != k {
        return Err(shape_err("lbs", format!("{} rotations for a {k}-joint model", rotmats.len())));
    }
    let sd = model.shapedirs().data();
    let tmpl = model.v_template().data();
    let mut shaped: Vec<Vector3<f64>> = (0..v)
        .map(|i| {
            Vector3::from_fn(|c, _| {
                let row = &sd[(i * 3 + c) * b..(i * 3 + c + 1) * b];
                tmpl[i * 3 + c] + row.iter().zip(betas).map(|(d, be)| d * be).sum::<f64>()
            })
        })
        .collect();
    let rest = model.regress_joints(&shaped);
    if use_posedirs {
        if let Some(pd) = model.posedirs() {
            let feat: Vec<f64> = rotmats[1..]
                .iter()
                .flat_map(|r| {
                    let d = r - Matrix3::identity();
                    // row-major flattening
                    (0..9).map(move |e| d[(e / 3, e % 3)])
                })
                .collect();
            let p = feat.len();
            let pdd = pd.data();
            for (i, vert) in shaped.iter_mut().enumerate() {
                for c in 0..3 {
                    let row = &pdd[(i * 3 + c) * p..(i * 3 + c + 1) * p];
                    vert[c] += row.iter().zip(&feat).map(|(a, f)| a * f).sum::<f64>();
                }
            }
        }
    }
    let world = forward_kinematics(model, rotmats, &rest)?;
    let skin = skinning_transforms(&world, &rest);
    let w = model.weights().data();
    let vertices = shaped
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut m = Matrix4::zeros();
            for (j, a) in skin.iter().enumerate() {
                let wij = w[i * k + j];
                if wij != 0.0 {
                    m += wij * a;
                }
            }
            (m * p.push(1.0)).xyz()
        })
        .collect();
    let skeleton = world.iter().map(|g| g.fixed_view::<3, 1>(0, 3).into_owned()).collect();
    Ok(LbsOutput {
        vertices,
        skeleton,
        shaped_rest_joints: rest,
    })
}
