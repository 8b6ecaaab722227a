//! Weak-perspective camera.

use nalgebra::{Matrix3, Vector3};
use parelab_numerics::{Tape, Var};

use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeakPerspectiveCamera {
    pub s: f64,
    /// Translation in normalized device coordinates.
    pub t: [f64; 2],
    pub r: Matrix3<f64>,
}

impl WeakPerspectiveCamera {
    pub fn new(s: f64, t: [f64; 2]) -> Self {
        Self { s, t, r: Matrix3::identity() }
    }

    /// `s · (R p)_xy + t`, in normalized device coordinates.
    pub fn project(&self, p: &Vector3<f64>) -> [f64; 2] {
        let q = self.r * p;
        [self.s * q.x + self.t[0], self.s * q.y + self.t[1]]
    }

    pub fn project_all(&self, points: &[Vector3<f64>]) -> Vec<[f64; 2]> {
        points.iter().map(|p| self.project(p)).collect()
    }

    /// Camera-space depth; smaller is nearer.
    pub fn depth(&self, p: &Vector3<f64>) -> f64 {
        (self.r * p).z
    }
}

/// Normalized coordinate in [−1, 1] to pixel coordinate in [0, size−1].
pub fn ndc_to_pixel(u: f64, size: usize) -> f64 {
    (u + 1.0) * 0.5 * (size as f64 - 1.0)
}

pub fn pixel_to_ndc(p: f64, size: usize) -> f64 {
    2.0 * p / (size as f64 - 1.0) - 1.0
}

/// Batched projection with identity camera rotation: `points` [N,K,3],
/// `scale` [N,1], `trans` [N,2] → [N,K,2].
pub fn project_tape(tape: &mut Tape, points: Var, scale: Var, trans: Var) -> Result<Var> {
    let ps = tape.shape(points).to_vec();
    if ps.len() != 3 || ps[2] != 3 {
        return Err(shape_err("project", format!("points must be [N,K,3], got {ps:?}")));
    }
    let n = ps[0];
    if tape.shape(scale) != [n, 1] || tape.shape(trans) != [n, 2] {
        return Err(shape_err(
            "project",
            format!("scale {:?} / translation {:?} for batch {n}", tape.shape(scale), tape.shape(trans)),
        ));
    }
    let xy = tape.narrow(points, 2, 0, 2)?;
    let s = tape.reshape(scale, &[n, 1, 1])?;
    let t = tape.reshape(trans, &[n, 1, 2])?;
    let scaled = tape.mul(xy, s)?;
    Ok(tape.add(scaled, t)?)
}
