//! ZYX Euler angles and the rotation matrices built from them.
//!
//! An array's orientation is `R = Rz(θz) · Ry(θy) · Rx(θx)`, so that
//! `Rᵀ = Rxᵀ · Ryᵀ · Rzᵀ`. `R` maps array-frame coordinates into the
//! reference frame; DOAs are expressed with `Rᵀ`.

use core::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, Vector3};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Tolerance used by [`rotation_to_euler`] to accept a matrix as a rotation.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EulerZYX {
    pub theta_x: f64,
    pub theta_y: f64,
    pub theta_z: f64,
}

/// Wraps an angle into `[-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    if (-PI..=PI).contains(&a) {
        return a;
    }
    let shifted = a + PI;
    let w = shifted - TAU * Float::floor(shifted / TAU) - PI;
    // the floor can land exactly on -π for inputs that were +π-ish
    if w < -PI {
        w + TAU
    } else {
        w
    }
}

impl EulerZYX {
    /// Builds normalized angles: θx, θz in `[-π, π]`, θy in `[-π/2, π/2]`.
    /// The rotation is unchanged by normalization.
    pub fn new(theta_x: f64, theta_y: f64, theta_z: f64) -> Self {
        Self::from_raw(theta_x, theta_y, theta_z).normalized()
    }

    /// Stores the angles as given. Used for optimizer iterates.
    pub const fn from_raw(theta_x: f64, theta_y: f64, theta_z: f64) -> Self {
        Self {
            theta_x,
            theta_y,
            theta_z,
        }
    }

    pub const fn zero() -> Self {
        Self::from_raw(0.0, 0.0, 0.0)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::from_raw(v.x, v.y, v.z)
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.theta_x, self.theta_y, self.theta_z)
    }

    pub fn normalized(&self) -> Self {
        let mut x = wrap_angle(self.theta_x);
        let mut y = wrap_angle(self.theta_y);
        let mut z = wrap_angle(self.theta_z);
        if !(-FRAC_PI_2..=FRAC_PI_2).contains(&y) {
            // (x, y, z) and (x + π, π - y, z + π) describe the same rotation
            x = wrap_angle(x + PI);
            y = wrap_angle(PI - y);
            z = wrap_angle(z + PI);
        }
        Self::from_raw(x, y, z)
    }

    pub fn is_normalized(&self) -> bool {
        (-PI..=PI).contains(&self.theta_x)
            && (-FRAC_PI_2..=FRAC_PI_2).contains(&self.theta_y)
            && (-PI..=PI).contains(&self.theta_z)
    }

    pub fn to_rotation(&self) -> Rotation3 {
        euler_to_rotation(self)
    }
}

/// A 3×3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Matrix3<f64>);

impl Rotation3 {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps a matrix after checking `RᵀR = I` and `det R = 1` within `tol`.
    pub fn from_matrix(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        let deviation = orthonormality_deviation(&m);
        if deviation > tol {
            return Err(Error::NonOrthonormal { deviation });
        }
        Ok(Self(m))
    }

    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn into_inner(self) -> Matrix3<f64> {
        self.0
    }
}

/// Max elementwise deviation of `RᵀR` from identity, or of `det R` from 1.
pub fn orthonormality_deviation(m: &Matrix3<f64>) -> f64 {
    let gram = m.transpose() * m - Matrix3::identity();
    let g = gram.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    g.max((m.determinant() - 1.0).abs())
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn drot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn drot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

pub fn euler_to_rotation(e: &EulerZYX) -> Rotation3 {
    Rotation3(rot_z(e.theta_z) * rot_y(e.theta_y) * rot_x(e.theta_x))
}

/// Partial derivatives of `Rᵀ = Rxᵀ Ryᵀ Rzᵀ` with respect to θx, θy, θz.
pub fn rotation_transpose_partials(e: &EulerZYX) -> [Matrix3<f64>; 3] {
    let rxt = rot_x(e.theta_x).transpose();
    let ryt = rot_y(e.theta_y).transpose();
    let rzt = rot_z(e.theta_z).transpose();
    [
        drot_x(e.theta_x).transpose() * ryt * rzt,
        rxt * drot_y(e.theta_y).transpose() * rzt,
        rxt * ryt * drot_z(e.theta_z).transpose(),
    ]
}

/// Extracts normalized ZYX angles. At gimbal lock (`|θy| = π/2`) the
/// solution with `θx = 0` is returned and the whole in-plane rotation goes
/// to θz.
pub fn rotation_to_euler(r: &Rotation3) -> Result<EulerZYX> {
    let m = r.matrix();
    let deviation = orthonormality_deviation(m);
    if deviation > ORTHONORMAL_TOL {
        return Err(Error::NonOrthonormal { deviation });
    }
    let cy = (m[(0, 0)] * m[(0, 0)] + m[(1, 0)] * m[(1, 0)]).sqrt();
    let theta_y = (-m[(2, 0)]).atan2(cy);
    let e = if cy > 1e-12 {
        EulerZYX::from_raw(
            m[(2, 1)].atan2(m[(2, 2)]),
            theta_y,
            m[(1, 0)].atan2(m[(0, 0)]),
        )
    } else {
        let theta_y = if m[(2, 0)] < 0.0 { FRAC_PI_2 } else { -FRAC_PI_2 };
        EulerZYX::from_raw(0.0, theta_y, (-m[(0, 1)]).atan2(m[(1, 1)]))
    };
    Ok(e.normalized())
}
