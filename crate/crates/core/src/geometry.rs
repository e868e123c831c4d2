//! Rigid transforms and quaternion helpers.
//!
//! Quaternions are scalar-first (w, x, y, z) and kept in the w >= 0 hemisphere.
//! Tangent vectors are ordered rotation first: `[wx, wy, wz, tx, ty, tz]`.

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// 6-vector tangent increment: rotation (axis * angle) then translation.
pub type Tangent = [f64; 6];

/// Rotation matrix of a quaternion. The input is normalized first; a zero or
/// non-finite quaternion is rejected.
pub fn quat_to_matrix(q: &Quaternion<f64>) -> Result<Matrix3<f64>> {
    let n = q.norm();
    if !n.is_finite() {
        return Err(Error::NonFinite("quaternion"));
    }
    if n < 1e-12 {
        return Err(Error::InvalidArgument("zero quaternion".into()));
    }
    let (w, x, y, z) = (q.w / n, q.i / n, q.j / n, q.k / n);
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Quaternion of a rotation matrix (Shepperd's method), canonicalized to w >= 0.
pub fn matrix_to_quat(m: &Matrix3<f64>) -> UnitQuaternion<f64> {
    let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        Quaternion::new(
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        )
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        Quaternion::new(
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        )
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        Quaternion::new(
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        )
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        Quaternion::new(
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        )
    };
    canonical(UnitQuaternion::new_normalize(q))
}

pub(crate) fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Skew-symmetric cross-product matrix.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rigid transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Se3Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for Se3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Se3Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose from a (possibly unnormalized) scalar-first quaternion.
    pub fn new(q: Quaternion<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("translation"));
        }
        let n = q.norm();
        if !n.is_finite() {
            return Err(Error::NonFinite("quaternion"));
        }
        if n < 1e-12 {
            return Err(Error::InvalidArgument("zero quaternion".into()));
        }
        Ok(Self::from_parts(UnitQuaternion::new_normalize(q), translation))
    }

    pub fn from_parts(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: canonical(rotation),
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::from_parts(UnitQuaternion::identity(), t)
    }

    pub fn from_rotation(r: UnitQuaternion<f64>) -> Self {
        Self::from_parts(r, Vector3::zeros())
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Scalar-first quaternion components.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        // the stored quaternion is unit, so this cannot fail
        quat_to_matrix(self.rotation.quaternion()).expect("unit quaternion")
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * x + self.translation
    }

    /// `compose(a, b)` applies `b` first, then `a`.
    pub fn compose(&self, other: &Se3Pose) -> Se3Pose {
        let r = self.rotation * other.rotation;
        let t = self.rotation_matrix() * other.translation + self.translation;
        Self::from_parts(UnitQuaternion::new_normalize(r.into_inner()), t)
    }

    pub fn inverse(&self) -> Se3Pose {
        let rt = self.rotation_matrix().transpose();
        Self::from_parts(self.rotation.inverse(), -(rt * self.translation))
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Rotation angle in radians, in [0, pi].
    pub fn rotation_angle(&self) -> f64 {
        let w = self.rotation.w.abs().min(1.0);
        let v = self.rotation.imag().norm();
        2.0 * v.atan2(w)
    }

    /// SE(3) exponential of a tangent vector (rotation first).
    pub fn exp(xi: &Tangent) -> Se3Pose {
        let omega = Vector3::new(xi[0], xi[1], xi[2]);
        let rho = Vector3::new(xi[3], xi[4], xi[5]);
        let theta2 = omega.norm_squared();
        let theta = theta2.sqrt();
        let w = skew(&omega);
        let w2 = w * w;
        let (b, c) = if theta < 1e-6 {
            (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
        } else {
            (
                (1.0 - theta.cos()) / theta2,
                (theta - theta.sin()) / (theta2 * theta),
            )
        };
        let v = Matrix3::identity() + w * b + w2 * c;
        Self::from_parts(UnitQuaternion::from_scaled_axis(omega), v * rho)
    }

    /// SE(3) logarithm, inverse of [`Se3Pose::exp`].
    pub fn log(&self) -> Tangent {
        let omega = self.rotation.scaled_axis();
        let theta2 = omega.norm_squared();
        let theta = theta2.sqrt();
        let w = skew(&omega);
        let coef = if theta < 1e-6 {
            1.0 / 12.0 + theta2 / 720.0
        } else {
            let half = 0.5 * theta;
            (1.0 - half * half.cos() / half.sin()) / theta2
        };
        let v_inv = Matrix3::identity() - w * 0.5 + w * w * coef;
        let rho = v_inv * self.translation;
        [omega.x, omega.y, omega.z, rho.x, rho.y, rho.z]
    }

    /// Left-multiplied tangent update `exp(xi) * self`.
    pub fn perturb_left(&self, xi: &Tangent) -> Se3Pose {
        Se3Pose::exp(xi).compose(self)
    }

    /// Rotation-angle and translation-norm distance between two poses.
    pub fn distance(&self, other: &Se3Pose) -> (f64, f64) {
        let d = self.inverse().compose(other);
        (d.rotation_angle(), (self.translation - other.translation).norm())
    }
}
