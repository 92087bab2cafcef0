//! Rigid 6DoF pose and its algebra.
//!
//! Row-vector convention everywhere: a pose maps an n x 3 coordinate block
//! `X` to `X * R + 1 t^T`. Composition, inversion and application all follow
//! that convention; frames are right-handed.

use nalgebra::{Matrix3, Vector3, SVD};
use ndarray::{Array2, ArrayView2, Axis};

use crate::cloud::PointCloud;

/// Orthonormality / determinant tolerance for pose validation.
pub const POSE_TOL: f64 = 1e-9;

/// Rigid transform: orthonormal `rotation` (det +1) and `translation` in
/// scene units, acting on row vectors as `x * R + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Rotation about +z by `angle` radians, as a row-convention matrix
    /// (row i is the image of basis vector e_i).
    pub fn rot_z(angle: f64) -> Matrix3<f64> {
        let (s, c) = angle.sin_cos();
        Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0)
    }

    /// Row-convention rotation matrix for a unit `axis` and `angle` radians.
    pub fn axis_angle(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
        // Rodrigues for column vectors, transposed into row convention.
        let k = axis.normalize();
        let (s, c) = angle.sin_cos();
        let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
        let col = Matrix3::identity() + kx * s + kx * kx * (1.0 - c);
        col.transpose()
    }

    /// Max deviation from orthonormality plus determinant error.
    pub fn validity_residual(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation;
        let ortho = (gram - Matrix3::identity()).abs().max();
        let det = (self.rotation.determinant() - 1.0).abs();
        ortho.max(det)
    }

    pub fn is_valid(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.validity_residual() <= POSE_TOL
    }

    /// Transform a single row vector.
    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let v = nalgebra::RowVector3::new(p[0], p[1], p[2]) * self.rotation;
        [
            v[0] + self.translation[0],
            v[1] + self.translation[1],
            v[2] + self.translation[2],
        ]
    }

    /// Nearest rotation (Frobenius sense) with det +1.
    pub fn orthonormalized(&self) -> Self {
        Self {
            rotation: nearest_rotation(&self.rotation),
            translation: self.translation,
        }
    }
}

/// Project a nearly-orthonormal matrix onto SO(3).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = SVD::new(*m, true, true);
    let u = svd.u.expect("svd of 3x3 always yields u");
    let v_t = svd.v_t.expect("svd of 3x3 always yields v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        // flip the direction of least variance
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Apply `pose` to every coordinate row: `X * R + 1 t^T`.
pub fn transform_points(pose: &RigidPose, points: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(points.raw_dim());
    let r = &pose.rotation;
    let t = &pose.translation;
    for (row, mut dst) in points.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let (x, y, z) = (row[0], row[1], row[2]);
        dst[0] = x * r[(0, 0)] + y * r[(1, 0)] + z * r[(2, 0)] + t[0];
        dst[1] = x * r[(0, 1)] + y * r[(1, 1)] + z * r[(2, 1)] + t[1];
        dst[2] = x * r[(0, 2)] + y * r[(1, 2)] + z * r[(2, 2)] + t[2];
    }
    out
}

/// Apply a pose to a cloud; feature channels are copied unchanged.
pub fn apply_pose(pose: &RigidPose, cloud: &PointCloud) -> PointCloud {
    cloud.with_points(transform_points(pose, cloud.points()))
}

/// Inverse transform: `(R^T, -t R^T)` in row convention.
pub fn invert_pose(pose: &RigidPose) -> RigidPose {
    let rt = pose.rotation.transpose();
    let t = -(pose.translation.transpose() * rt).transpose();
    RigidPose::new(rt, t)
}

/// Composition `a` then `b`: `x -> (x R_a + t_a) R_b + t_b`.
pub fn compose_pose(a: &RigidPose, b: &RigidPose) -> RigidPose {
    let rotation = a.rotation * b.rotation;
    let translation = (a.translation.transpose() * b.rotation).transpose() + b.translation;
    RigidPose::new(rotation, translation)
}

/// Compose a chain of poses left to right, re-orthonormalizing every 100
/// links to bound drift in long refinement chains.
pub fn compose_chain(poses: &[RigidPose]) -> RigidPose {
    let mut acc = RigidPose::identity();
    for (i, p) in poses.iter().enumerate() {
        acc = compose_pose(&acc, p);
        if (i + 1) % 100 == 0 {
            acc = acc.orthonormalized();
        }
    }
    acc
}
