//! Rigid-motion algebra.
//!
//! Rotations are parameterised by extrinsic XYZ Euler angles, composed as
//! `R = Rz(rz) · Ry(ry) · Rx(rx)`. A 6-DoF vector is laid out as
//! `(rx, ry, rz, tx, ty, tz)` in radians and meters. Everything here is `f64`.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Orthonormality tolerance accepted from callers.
pub const ORTHONORMAL_TOL: f64 = 1e-6;
/// Rotations drifting further than this from SO(3) are re-projected.
pub const REPROJECT_TOL: f64 = 1e-10;
const GIMBAL_TOL: f64 = 1e-9;

/// Largest absolute entry of `RᵀR − I`.
pub fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).abs().max()
}

/// Nearest rotation in the Frobenius sense (polar factor), with the sign of
/// the smallest singular direction flipped if needed so that `det = +1`.
pub fn project_to_so3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd computes u");
    let v_t = svd.v_t.expect("svd computes v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates `m` against [`ORTHONORMAL_TOL`] and a positive determinant.
    /// Inputs that pass but sit further than [`REPROJECT_TOL`] from SO(3) are
    /// projected back.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        Self::with_tolerance(m, ORTHONORMAL_TOL)
    }

    pub fn with_tolerance(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(invalid("rotation matrix has non-finite entries"));
        }
        let err = orthonormality_error(&m);
        if err > tol {
            return Err(invalid(format!(
                "matrix is not orthonormal (max |RᵀR − I| = {err:.3e} > {tol:.1e})"
            )));
        }
        if m.determinant() <= 0.0 {
            return Err(invalid("rotation matrix has non-positive determinant"));
        }
        Ok(Self::guarded(m))
    }

    fn guarded(m: Matrix3<f64>) -> Self {
        if orthonormality_error(&m) > REPROJECT_TOL {
            Self(project_to_so3(&m))
        } else {
            Self(m)
        }
    }

    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Rotation angle in radians, `arccos((tr R − 1) / 2)` with the argument
    /// clamped to `[-1, 1]`.
    pub fn angle(&self) -> f64 {
        rotation_angle(&self.0)
    }

    pub fn to_euler(&self) -> Vector3<f64> {
        euler_from_rotation(&self.0)
    }
}

impl Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix::guarded(self.0 * rhs.0)
    }
}

pub(crate) fn rotation_angle(m: &Matrix3<f64>) -> f64 {
    let d = 0.5 * (m[(0, 0)] + m[(1, 1)] + m[(2, 2)] - 1.0);
    d.clamp(-1.0, 1.0).acos()
}

/// Maps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a % (2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    } else if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// `R = Rz(rz) · Ry(ry) · Rx(rx)`.
pub fn euler_to_matrix(angles: &Vector3<f64>) -> Result<RotationMatrix> {
    if angles.iter().any(|a| !a.is_finite()) {
        return Err(invalid(format!("non-finite Euler angles {angles:?}")));
    }
    Ok(RotationMatrix::about_z(angles.z) * RotationMatrix::about_y(angles.y) * RotationMatrix::about_x(angles.x))
}

/// Inverse of [`euler_to_matrix`]. At gimbal lock (`|cos ry| < 1e-9`) the
/// roll is fixed to zero and the remaining rotation is assigned to `rz`.
pub fn matrix_to_euler(m: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let r = RotationMatrix::new(*m)?;
    Ok(euler_from_rotation(&r.0))
}

fn euler_from_rotation(m: &Matrix3<f64>) -> Vector3<f64> {
    let cos_ry = m[(0, 0)].hypot(m[(1, 0)]);
    let ry = (-m[(2, 0)]).atan2(cos_ry);
    let (rx, rz) = if cos_ry < GIMBAL_TOL {
        // R = [[0, -s, ±c], [0, c, ±s], [∓1, 0, 0]] with s, c of (rz ∓ rx)
        (0.0, (-m[(0, 1)]).atan2(m[(1, 1)]))
    } else {
        (m[(2, 1)].atan2(m[(2, 2)]), m[(1, 0)].atan2(m[(0, 0)]))
    };
    Vector3::new(wrap_angle(rx), wrap_angle(ry), wrap_angle(rz))
}

/// Rigid motion `[R t; 0 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformSE3 {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl Default for TransformSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl TransformSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: RotationMatrix::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: RotationMatrix, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(RotationMatrix::identity(), t)
    }

    pub fn from_rotation(r: RotationMatrix) -> Self {
        Self::new(r, Vector3::zeros())
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Result<Self> {
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return Err(invalid("homogeneous transform bottom row must be (0, 0, 0, 1)"));
        }
        let r = RotationMatrix::new(m.fixed_view::<3, 3>(0, 0).into_owned())?;
        Ok(Self::new(r, m.fixed_view::<3, 1>(0, 3).into_owned()))
    }

    /// `self · other`.
    pub fn compose(&self, other: &TransformSE3) -> TransformSE3 {
        TransformSE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation.matrix() * other.translation + self.translation,
        }
    }

    /// `(Rᵀ, −Rᵀt)`.
    pub fn inverse(&self) -> TransformSE3 {
        let rt = self.rotation.transpose();
        TransformSE3 {
            rotation: rt,
            translation: -(rt.matrix() * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix() * p + self.translation
    }

    pub fn to_pose(&self) -> Pose6DoF {
        Pose6DoF {
            angles: self.rotation.to_euler(),
            translation: self.translation,
        }
    }
}

impl Mul for TransformSE3 {
    type Output = TransformSE3;

    fn mul(self, rhs: TransformSE3) -> TransformSE3 {
        self.compose(&rhs)
    }
}

pub fn compose(a: &TransformSE3, b: &TransformSE3) -> TransformSE3 {
    a.compose(b)
}

pub fn invert(t: &TransformSE3) -> TransformSE3 {
    t.inverse()
}

/// Flattened 6-DoF motion `(rx, ry, rz, tx, ty, tz)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose6DoF {
    pub angles: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose6DoF {
    /// Angles are wrapped into `(-π, π]`.
    pub fn new(angles: Vector3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if angles.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("6-DoF pose has non-finite entries"));
        }
        Ok(Self {
            angles: angles.map(wrap_angle),
            translation,
        })
    }

    pub fn from_array(v: [f64; 6]) -> Result<Self> {
        Self::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))
    }

    pub fn to_array(&self) -> [f64; 6] {
        let (a, t) = (&self.angles, &self.translation);
        [a.x, a.y, a.z, t.x, t.y, t.z]
    }

    pub fn to_transform(&self) -> TransformSE3 {
        let r = euler_to_matrix(&self.angles).expect("pose angles are finite");
        TransformSE3::new(r, self.translation)
    }
}

/// Absolute camera-to-world poses indexed by frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    poses: Vec<TransformSE3>,
}

impl Trajectory {
    pub fn new(poses: Vec<TransformSE3>) -> Result<Self> {
        if poses.is_empty() {
            return Err(invalid("trajectory needs at least one pose"));
        }
        Ok(Self { poses })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn poses(&self) -> &[TransformSE3] {
        &self.poses
    }

    pub fn get(&self, i: usize) -> Option<&TransformSE3> {
        self.poses.get(i)
    }

    pub fn positions(&self) -> impl ExactSizeIterator<Item = Vector3<f64>> + '_ {
        self.poses.iter().map(|p| p.translation)
    }

    pub fn into_poses(self) -> Vec<TransformSE3> {
        self.poses
    }

    /// Applies `t · pose` to every pose.
    pub fn left_multiplied(&self, t: &TransformSE3) -> Trajectory {
        Trajectory {
            poses: self.poses.iter().map(|p| t.compose(p)).collect(),
        }
    }

    /// Re-expresses every pose relative to the first: `pose_0⁻¹ · pose_k`.
    pub fn anchored_to_first(&self) -> Trajectory {
        self.left_multiplied(&self.poses[0].inverse())
    }
}

/// Integrates relative motions from `origin`.
pub fn relative_to_absolute(motions: &[Pose6DoF], origin: &TransformSE3) -> Trajectory {
    let mut poses = Vec::with_capacity(motions.len() + 1);
    poses.push(*origin);
    for m in motions {
        let prev = poses[poses.len() - 1];
        poses.push(prev.compose(&m.to_transform()));
    }
    Trajectory { poses }
}

/// Relative transform `pose_from⁻¹ · pose_to`.
pub fn relative_transform(from: &TransformSE3, to: &TransformSE3) -> TransformSE3 {
    from.inverse().compose(to)
}

/// Motion `k` maps frame `k` to frame `k + 1`.
pub fn absolute_to_relative(traj: &Trajectory) -> Result<Vec<Pose6DoF>> {
    if traj.len() < 2 {
        return Err(invalid(format!(
            "need at least two poses to form relative motions, got {}",
            traj.len()
        )));
    }
    Ok(traj
        .poses
        .windows(2)
        .map(|w| relative_transform(&w[0], &w[1]).to_pose())
        .collect())
}
