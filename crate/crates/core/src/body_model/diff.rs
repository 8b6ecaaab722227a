//! Differentiable posing on the tape: 6D-to-matrix conversion and LBS.

use parelab_numerics::{Tape, Tensor, Var};

use super::BodyModelDef;
use crate::error::{shape_err, CoreError, Result};

/// Gram-Schmidt on rows of `[M,6]`, producing `[M,3,3]` with columns `b1 b2 b3`.
pub fn rot6d_to_matrix_tape(tape: &mut Tape, x: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 || shape[1] != 6 {
        return Err(shape_err("rot6d_to_matrix", format!("expected [M,6], got {shape:?}")));
    }
    let m = shape[0];
    let xd = tape.value(x).data();
    let mut out = vec![0.0; m * 9];
    for i in 0..m {
        let r: [f64; 6] = xd[i * 6..i * 6 + 6].try_into().unwrap();
        let rot = super::rotation::rot6d_to_matrix(r).map_err(|e| match e {
            CoreError::DegenerateRotation(d) => CoreError::DegenerateRotation(format!("row {i}: {d}")),
            other => other,
        })?;
        for rr in 0..3 {
            for cc in 0..3 {
                out[i * 9 + rr * 3 + cc] = rot[(rr, cc)];
            }
        }
    }
    let value = Tensor::new([m, 3, 3], out)?;
    Ok(tape.custom(&[x], value, move |g, y, xs| {
        let (g, y, x) = (g.data(), y.data(), xs[0].data());
        let mut gx = vec![0.0; m * 6];
        for i in 0..m {
            let col = |d: &[f64], c: usize| [d[i * 9 + c], d[i * 9 + 3 + c], d[i * 9 + 6 + c]];
            let (b1, b2) = (col(y, 0), col(y, 1));
            let (gb1_out, gb2_out, gb3) = (col(g, 0), col(g, 1), col(g, 2));
            let a1 = [x[i * 6], x[i * 6 + 1], x[i * 6 + 2]];
            let a2 = [x[i * 6 + 3], x[i * 6 + 4], x[i * 6 + 5]];
            let n1 = norm(a1);
            let dot12 = dot(b1, a2);
            let u = sub(a2, scale(b1, dot12));
            let nu = norm(u);
            // b3 = b1 × b2
            let gb1 = add(gb1_out, cross(b2, gb3));
            let gb2 = add(gb2_out, cross(gb3, b1));
            // b2 = u / |u|
            let gu = scale(sub(gb2, scale(b2, dot(b2, gb2))), 1.0 / nu);
            // u = a2 − (b1·a2) b1
            let ga2 = sub(gu, scale(b1, dot(b1, gu)));
            let gb1 = sub(gb1, add(scale(gu, dot12), scale(a2, dot(b1, gu))));
            // b1 = a1 / |a1|
            let ga1 = scale(sub(gb1, scale(b1, dot(b1, gb1))), 1.0 / n1);
            gx[i * 6..i * 6 + 3].copy_from_slice(&ga1);
            gx[i * 6 + 3..i * 6 + 6].copy_from_slice(&ga2);
        }
        vec![Some(Tensor::new([m, 6], gx).unwrap())]
    }))
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}
fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Model arrays laid out for batched tape evaluation.
#[derive(Clone, Debug)]
pub struct BodyTensors {
    pub num_vertices: usize,
    pub num_joints: usize,
    pub num_betas: usize,
    parents: Vec<Option<usize>>,
    /// [1, V·3]
    template: Tensor,
    /// [B, V·3]
    shapedirs: Tensor,
    /// [1, K·3]
    joint_template: Tensor,
    /// [B, K·3], the shape basis pushed through the regressor.
    joint_dirs: Tensor,
    /// [9(K−1), V·3]
    posedirs: Option<Tensor>,
    /// [V, K]
    weights: Tensor,
    /// [K, V]
    regressor: Tensor,
}

/// Batched posing result.
#[derive(Clone, Copy, Debug)]
pub struct TapeLbs {
    /// [N, V, 3]
    pub vertices: Var,
    /// [N, K, 3], regressed from the posed vertices.
    pub joints: Var,
}

impl BodyTensors {
    pub fn new(model: &BodyModelDef, use_posedirs: bool) -> Self {
        let (v, k, b) = (model.num_vertices(), model.num_joints(), model.num_betas());
        let sd = model.shapedirs().data();
        let shapedirs = Tensor::from_fn([b, v * 3], |i| sd[(i % (v * 3)) * b + i / (v * 3)]);
        let w = model.joint_regressor().data();
        let joint_dirs = Tensor::from_fn([b, k * 3], |i| {
            let (bi, r) = (i / (k * 3), i % (k * 3));
            let (j, c) = (r / 3, r % 3);
            (0..v).map(|vi| w[j * v + vi] * sd[(vi * 3 + c) * b + bi]).sum()
        });
        let posedirs = if use_posedirs {
            model.posedirs().map(|pd| {
                let p = 9 * (k - 1);
                let d = pd.data();
                Tensor::from_fn([p, v * 3], |i| d[(i % (v * 3)) * p + i / (v * 3)])
            })
        } else {
            None
        };
        Self {
            num_vertices: v,
            num_joints: k,
            num_betas: b,
            parents: model.parents().to_vec(),
            template: model.v_template().clone().reshape([1, v * 3]).unwrap(),
            shapedirs,
            joint_template: model.rest_joints().clone().reshape([1, k * 3]).unwrap(),
            joint_dirs,
            posedirs,
            weights: model.weights().clone(),
            regressor: model.joint_regressor().clone(),
        }
    }
}

/// Batched LBS: `rotmats` [N,K,3,3], `betas` [N,B].
pub fn lbs_tape(tape: &mut Tape, bt: &BodyTensors, rotmats: Var, betas: Var) -> Result<TapeLbs> {
    let (v, k, b) = (bt.num_vertices, bt.num_joints, bt.num_betas);
    let rs = tape.shape(rotmats).to_vec();
    let n = rs[0];
    if rs != [n, k, 3, 3] || tape.shape(betas) != [n, b] {
        return Err(shape_err(
            "lbs",
            format!("rotmats {rs:?} and betas {:?} for K={k}, B={b}", tape.shape(betas)),
        ));
    }
    let sd = tape.constant(bt.shapedirs.clone());
    let tmpl = tape.constant(bt.template.clone());
    let offs = tape.matmul(betas, sd)?;
    let mut shaped = tape.add(offs, tmpl)?;
    let jd = tape.constant(bt.joint_dirs.clone());
    let jt = tape.constant(bt.joint_template.clone());
    let joffs = tape.matmul(betas, jd)?;
    let rest = tape.add(joffs, jt)?;
    let rest = tape.reshape(rest, &[n, k, 3])?;
    if let Some(pd) = &bt.posedirs {
        let tail = tape.narrow(rotmats, 1, 1, k - 1)?;
        let eye = tape.constant(Tensor::from_fn([3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let feat = tape.sub(tail, eye)?;
        let feat = tape.reshape(feat, &[n, 9 * (k - 1)])?;
        let pd = tape.constant(pd.clone());
        let poffs = tape.matmul(feat, pd)?;
        shaped = tape.add(shaped, poffs)?;
    }

    let mut rot_world: Vec<Var> = Vec::with_capacity(k);
    let mut trans_world: Vec<Var> = Vec::with_capacity(k);
    let mut joint_col: Vec<Var> = Vec::with_capacity(k);
    let mut blocks: Vec<Var> = Vec::with_capacity(k);
    for j in 0..k {
        let r = tape.narrow(rotmats, 1, j, 1)?;
        let r = tape.reshape(r, &[n, 3, 3])?;
        let jj = tape.narrow(rest, 1, j, 1)?;
        let jj = tape.reshape(jj, &[n, 3, 1])?;
        let (g_rot, g_t) = match bt.parents[j] {
            None => (r, jj),
            Some(p) => {
                let off = tape.sub(jj, joint_col[p])?;
                let rot = tape.bmm(rot_world[p], r)?;
                let moved = tape.bmm(rot_world[p], off)?;
                let t = tape.add(moved, trans_world[p])?;
                (rot, t)
            }
        };
        // skinning transform: [G_rot | G_t − G_rot·j]
        let bind = tape.bmm(g_rot, jj)?;
        let a_t = tape.sub(g_t, bind)?;
        let rot_flat = tape.reshape(g_rot, &[n, 1, 9])?;
        let t_flat = tape.reshape(a_t, &[n, 1, 3])?;
        blocks.push(tape.concat(&[rot_flat, t_flat], 2)?);
        rot_world.push(g_rot);
        trans_world.push(g_t);
        joint_col.push(jj);
    }
    let stacked = tape.concat(&blocks, 1)?; // [N,K,12]
    let stacked = tape.permute(stacked, &[1, 0, 2])?;
    let stacked = tape.reshape(stacked, &[k, n * 12])?;
    let w = tape.constant(bt.weights.clone());
    let blended = tape.matmul(w, stacked)?; // [V, N·12]
    let blended = tape.reshape(blended, &[v, n, 12])?;
    let blended = tape.permute(blended, &[1, 0, 2])?; // [N,V,12]
    let lin = tape.narrow(blended, 2, 0, 9)?;
    let lin = tape.reshape(lin, &[n, v, 3, 3])?;
    let trans = tape.narrow(blended, 2, 9, 3)?;
    let shaped = tape.reshape(shaped, &[n, v, 1, 3])?;
    let prod = tape.mul(lin, shaped)?;
    let rotated = tape.sum_axis(prod, 3, false)?;
    let vertices = tape.add(rotated, trans)?;

    let flat = tape.permute(vertices, &[1, 0, 2])?;
    let flat = tape.reshape(flat, &[v, n * 3])?;
    let reg = tape.constant(bt.regressor.clone());
    let joints = tape.matmul(reg, flat)?;
    let joints = tape.reshape(joints, &[k, n, 3])?;
    let joints = tape.permute(joints, &[1, 0, 2])?;
    Ok(TapeLbs { vertices, joints })
}
