//! Rigid transforms, the continuous 6D rotation representation and the
//! transform-level error metrics (TE / RE).
//!
//! Rotations act on coordinates relative to the volume center, so a
//! [`RigidTransform`] maps `p ↦ R·p + t` in that centered frame. Translations
//! are in millimeters and angles in radians throughout.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalization denominators below this are treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-9;

/// A proper rigid motion: rotation followed by translation (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
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

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    /// Rotation by `angle` radians about `axis` (normalized internally), then
    /// translation by `t`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, t: Vector3<f64>) -> Self {
        Self::new(axis_angle_matrix(axis, angle), t)
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn invert(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Largest entry of |RᵀR − I|.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }

    /// True when R is orthonormal with det 1 to `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        self.orthonormality_error() <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }
}

/// Network-facing parameterization θ = [θʳ (9), θᵗ (3)].
///
/// `theta_r` stacks the columns of R: entries 0..3 are the first column,
/// 3..6 the second and 6..9 the third, so that the first six entries feed
/// [`orthogonalize6d`] directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub theta_r: [f64; 9],
    pub theta_t: [f64; 3],
}

impl TransformParams {
    pub fn from_transform(t: &RigidTransform) -> Self {
        params_from_transform(t)
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 12 {
            return Err(Error::shape(format!(
                "expected 12 transform parameters, got {}",
                v.len()
            )));
        }
        let mut theta_r = [0.0; 9];
        let mut theta_t = [0.0; 3];
        theta_r.copy_from_slice(&v[..9]);
        theta_t.copy_from_slice(&v[9..]);
        Ok(Self { theta_r, theta_t })
    }

    pub fn to_array(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        out[..9].copy_from_slice(&self.theta_r);
        out[9..].copy_from_slice(&self.theta_t);
        out
    }

    pub fn rotation_6d(&self) -> [f64; 6] {
        let mut v = [0.0; 6];
        v.copy_from_slice(&self.theta_r[..6]);
        v
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.theta_t)
    }

    /// Inference-time transform `[O(θʳ₁..₆), θᵗ]`.
    pub fn to_transform(&self) -> Result<RigidTransform> {
        Ok(RigidTransform::new(
            orthogonalize6d(&self.rotation_6d())?,
            self.translation(),
        ))
    }
}

/// Maps a 6-vector onto SO(3) by Gram–Schmidt on its two 3-vector halves.
///
/// The columns are `r₁ = N(a)`, `r₂ = N(b − (r₁·b) r₁)` and `r₃ = r₁ × r₂`.
pub fn orthogonalize6d(v: &[f64; 6]) -> Result<Matrix3<f64>> {
    let a = Vector3::new(v[0], v[1], v[2]);
    let b = Vector3::new(v[3], v[4], v[5]);
    let na = a.norm();
    if !(na >= DEGENERATE_NORM) {
        return Err(Error::DegenerateInput("first 3-vector has vanishing norm"));
    }
    let r1 = a / na;
    let b_perp = b - r1 * r1.dot(&b);
    let nb = b_perp.norm();
    // Also reject near-parallel pairs: the residual must be meaningful
    // relative to the length of b.
    if !(nb >= DEGENERATE_NORM) || nb <= 1e-6 * b.norm() {
        return Err(Error::DegenerateInput(
            "second 3-vector is parallel to the first",
        ));
    }
    let r2 = b_perp / nb;
    let r3 = r1.cross(&r2);
    Ok(Matrix3::from_columns(&[r1, r2, r3]))
}

pub fn params_from_transform(t: &RigidTransform) -> TransformParams {
    let mut theta_r = [0.0; 9];
    // nalgebra storage is column-major, which is exactly the stacking we want.
    theta_r.copy_from_slice(t.rotation.as_slice());
    TransformParams {
        theta_r,
        theta_t: [t.translation.x, t.translation.y, t.translation.z],
    }
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.invert()
}

/// Rodrigues rotation about `axis` (normalized here) by `angle` radians.
pub fn axis_angle_matrix(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner()
}

/// Geodesic angle of a rotation matrix, in [0, π].
///
/// Equal to `arccos((tr R − 1) / 2)`, evaluated as `atan2(sin θ, cos θ)` with
/// `2 sin θ` taken from the skew part, which stays accurate near 0 and π.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let skew = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    (skew.norm() / 2.0).atan2((r.trace() - 1.0) / 2.0)
}

/// RE = arccos((tr(Rᵀ·O(θ̂ʳ)) − 1) / 2), radians.
pub fn rotation_error(r: &Matrix3<f64>, r_hat_6d: &[f64; 6]) -> Result<f64> {
    let r_hat = orthogonalize6d(r_hat_6d)?;
    Ok(rotation_angle(&(r.transpose() * r_hat)))
}

/// TE = ‖t − t̂‖₂, same units as the inputs.
pub fn translation_error(t: &Vector3<f64>, t_hat: &Vector3<f64>) -> f64 {
    (t - t_hat).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rot_z(angle: f64) -> Matrix3<f64> {
        let (s, c) = angle.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    fn assert_mat_close(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) {
        assert!((a - b).amax() <= tol, "{a} vs {b}");
    }

    #[test]
    fn canonical_basis_gives_identity() {
        let r = orthogonalize6d(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(r, Matrix3::identity());
        let r = orthogonalize6d(&[2.0, 0.0, 0.0, 0.0, 3.0, 0.0]).unwrap();
        assert_eq!(r, Matrix3::identity());
    }

    #[test]
    fn swapped_axes_give_left_handed_fix() {
        // r1 = e_y, r2 = e_x, r3 = e_y × e_x = −e_z
        let r = orthogonalize6d(&[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let expected = Matrix3::from_columns(&[
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 0.0, -1.0),
        ]);
        assert_mat_close(&r, &expected, 0.0);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(matches!(
            orthogonalize6d(&[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            orthogonalize6d(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(orthogonalize6d(&[f64::NAN, 0.0, 0.0, 0.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn params_encode_columns() {
        let p = params_from_transform(&RigidTransform::identity());
        assert_eq!(p.theta_r, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(p.theta_t, [0.0; 3]);

        let t = RigidTransform::new(rot_z(FRAC_PI_2), Vector3::zeros());
        let p = params_from_transform(&t);
        let expected = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        for (a, b) in p.theta_r.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_mat_close(&p.to_transform().unwrap().rotation, &t.rotation, 1e-12);
    }

    #[test]
    fn compose_and_invert() {
        let t = RigidTransform::from_axis_angle(
            Vector3::new(1.0, 2.0, 3.0),
            0.7,
            Vector3::new(0.1, -0.2, 0.3),
        );
        assert_eq!(t.compose(&RigidTransform::identity()), t);
        let id = t.compose(&t.invert());
        assert_mat_close(&id.rotation, &Matrix3::identity(), 1e-12);
        assert!(id.translation.norm() < 1e-12);

        let q = RigidTransform::new(rot_z(FRAC_PI_2), Vector3::zeros());
        assert_mat_close(&q.compose(&q).rotation, &rot_z(PI), 1e-12);

        let shift = RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(shift.invert().translation, Vector3::new(-1.0, -2.0, -3.0));
        assert_eq!(
            RigidTransform::identity().invert(),
            RigidTransform::identity()
        );

        let rt = RigidTransform::new(rot_z(FRAC_PI_2), Vector3::new(1.0, 0.0, 0.0));
        let inv = rt.invert();
        // 90° about z then +x; inverse must send (1,0,0) back to the origin.
        assert!((inv.apply(&Vector3::new(1.0, 0.0, 0.0))).norm() < 1e-12);
        let p = Vector3::new(0.3, -1.2, 2.0);
        assert!((rt.apply(&inv.apply(&p)) - p).norm() < 1e-12);
    }

    #[test]
    fn rotation_error_examples() {
        let id6 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        assert_eq!(rotation_error(&Matrix3::identity(), &id6).unwrap(), 0.0);
        let z90 = params_from_transform(&RigidTransform::new(rot_z(FRAC_PI_2), Vector3::zeros()));
        let re = rotation_error(&Matrix3::identity(), &z90.rotation_6d()).unwrap();
        assert!((re - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn translation_error_examples() {
        let a = Vector3::new(0.4, 0.4, 0.4);
        let z = Vector3::zeros();
        assert_eq!(translation_error(&a, &a), 0.0);
        assert!((translation_error(&a, &z) - 0.4 * 3f64.sqrt()).abs() < 1e-12);
        assert!((translation_error(&a, &z) - 0.6928).abs() < 1e-4);
        assert_eq!(translation_error(&a, &z), translation_error(&z, &a));
    }
}
