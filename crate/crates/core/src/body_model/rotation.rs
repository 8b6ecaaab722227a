//! Rotation representations: axis-angle, 6D (first two matrix columns) and matrices.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use crate::error::{CoreError, Result};

/// Below this angle Rodrigues is replaced by its second-order expansion.
pub const SMALL_ANGLE: f64 = 1e-8;

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn axis_angle_to_matrix(aa: [f64; 3]) -> Matrix3<f64> {
    let v = Vector3::from(aa);
    let theta = v.norm();
    let k = skew(&v);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let (s, c) = theta.sin_cos();
    Matrix3::identity() + (s / theta) * k + ((1.0 - c) / (theta * theta)) * k * k
}

/// Inverse of [`axis_angle_to_matrix`] with angle in `[0, π]`. Goes through
/// the quaternion, which stays well conditioned near half turns.
pub fn matrix_to_axis_angle(m: &Matrix3<f64>) -> [f64; 3] {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m));
    q.scaled_axis().into()
}

/// Columns `b1 b2 b3` from Gram-Schmidt on the two stored columns.
pub fn rot6d_to_matrix(r6: [f64; 6]) -> Result<Matrix3<f64>> {
    let a1 = Vector3::new(r6[0], r6[1], r6[2]);
    let a2 = Vector3::new(r6[3], r6[4], r6[5]);
    let n1 = a1.norm();
    if !(n1 > 1e-12) {
        return Err(CoreError::DegenerateRotation(format!("first column has norm {n1:e}")));
    }
    let b1 = a1 / n1;
    let u = a2 - b1.dot(&a2) * b1;
    let nu = u.norm();
    if !(nu > 1e-12 * a2.norm().max(1.0)) {
        return Err(CoreError::DegenerateRotation(format!(
            "second column parallel to the first (residual {nu:e})"
        )));
    }
    let b2 = u / nu;
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

/// First two columns, column-major: `[R00, R10, R20, R01, R11, R21]`.
pub fn matrix_to_rot6d(m: &Matrix3<f64>) -> [f64; 6] {
    [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]]
}

/// Angle of `aᵀb`, in radians.
pub fn geodesic_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let r = a.transpose() * b;
    let cos = (r.trace() - 1.0) / 2.0;
    let sin = 0.5 * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
    // atan2 keeps small angles accurate where acos loses half the digits
    sin.atan2(cos)
}

pub fn rot_x(angle: f64) -> Matrix3<f64> {
    axis_angle_to_matrix([angle, 0.0, 0.0])
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    axis_angle_to_matrix([0.0, angle, 0.0])
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    axis_angle_to_matrix([0.0, 0.0, angle])
}

/// Per-joint rotations in either supported parameterization.
#[derive(Clone, Debug, PartialEq)]
pub enum Pose {
    AxisAngle(Vec<[f64; 3]>),
    Rot6d(Vec<[f64; 6]>),
}

impl Pose {
    pub fn identity(num_joints: usize) -> Self {
        Pose::AxisAngle(vec![[0.0; 3]; num_joints])
    }

    pub fn num_joints(&self) -> usize {
        match self {
            Pose::AxisAngle(r) => r.len(),
            Pose::Rot6d(r) => r.len(),
        }
    }

    pub fn to_rotmats(&self) -> Result<Vec<Matrix3<f64>>> {
        match self {
            Pose::AxisAngle(r) => Ok(r.iter().map(|&a| axis_angle_to_matrix(a)).collect()),
            Pose::Rot6d(r) => r.iter().map(|&a| rot6d_to_matrix(a)).collect(),
        }
    }

    pub fn to_axis_angle(&self) -> Result<Pose> {
        Ok(Pose::AxisAngle(self.to_rotmats()?.iter().map(matrix_to_axis_angle).collect()))
    }

    pub fn to_rot6d(&self) -> Result<Pose> {
        Ok(Pose::Rot6d(self.to_rotmats()?.iter().map(matrix_to_rot6d).collect()))
    }
}
