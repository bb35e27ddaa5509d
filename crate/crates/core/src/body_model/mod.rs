//! Parametric body model.
//!
//! The 88-dimensional parameter vector is laid out as
//! `[beta (10) | theta (23 x 3) | transl (3) | rot_u (3) | rot_v (3)]`.
//! The global rotation is carried as per-axis `(u, v)` pairs whose angle is
//! `atan2(u, v)`; the three angles compose as intrinsic X, then Y, then Z.

mod skinning;
mod template;
mod toy;

#[cfg(not(feature = "std"))]
use num_traits::Float as _;
use core::f64::consts::PI;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use skinning::{forward, forward_traced, ForwardTrace};
pub use template::{BodyTemplate, TemplateSet};
pub use toy::make_toy_template;

pub const N_BETAS: usize = 10;
pub const N_JOINTS: usize = 24;
pub const N_BODY_JOINTS: usize = 23;
pub const PARAM_DIM: usize = 88;

pub const BETA_OFFSET: usize = 0;
pub const THETA_OFFSET: usize = 10;
pub const TRANSL_OFFSET: usize = 79;
pub const ROT_U_OFFSET: usize = 82;
pub const ROT_V_OFFSET: usize = 85;

/// Below this norm a `(u, v)` pair carries no usable angle.
pub const MIN_ROTATION_NORM: f64 = 1e-8;

/// Kinematic tree of the 24-joint skeleton (root has no parent).
pub const SMPL_PARENTS: [i32; N_JOINTS] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SmplParams {
    pub beta: [f64; N_BETAS],
    pub theta: [[f64; 3]; N_BODY_JOINTS],
    pub transl: [f64; 3],
    pub rot_u: [f64; 3],
    pub rot_v: [f64; 3],
}

impl SmplParams {
    /// Identity pose: zero shape, zero joint rotations, zero translation and
    /// a global rotation of zero on every axis.
    pub fn identity() -> Self {
        Self {
            rot_v: [1.0; 3],
            ..Self::default()
        }
    }

    pub fn pack(&self) -> [f64; PARAM_DIM] {
        let mut x = [0.0; PARAM_DIM];
        x[..N_BETAS].copy_from_slice(&self.beta);
        for (j, rot) in self.theta.iter().enumerate() {
            x[THETA_OFFSET + 3 * j..THETA_OFFSET + 3 * j + 3].copy_from_slice(rot);
        }
        x[TRANSL_OFFSET..TRANSL_OFFSET + 3].copy_from_slice(&self.transl);
        x[ROT_U_OFFSET..ROT_U_OFFSET + 3].copy_from_slice(&self.rot_u);
        x[ROT_V_OFFSET..ROT_V_OFFSET + 3].copy_from_slice(&self.rot_v);
        x
    }

    pub fn unpack(x: &[f64]) -> Result<Self> {
        if x.len() != PARAM_DIM {
            return Err(Error::shape("parameter vector", PARAM_DIM, x.len()));
        }
        let mut p = Self::default();
        p.beta.copy_from_slice(&x[..N_BETAS]);
        for (j, rot) in p.theta.iter_mut().enumerate() {
            rot.copy_from_slice(&x[THETA_OFFSET + 3 * j..THETA_OFFSET + 3 * j + 3]);
        }
        p.transl.copy_from_slice(&x[TRANSL_OFFSET..TRANSL_OFFSET + 3]);
        p.rot_u.copy_from_slice(&x[ROT_U_OFFSET..ROT_U_OFFSET + 3]);
        p.rot_v.copy_from_slice(&x[ROT_V_OFFSET..ROT_V_OFFSET + 3]);
        Ok(p)
    }

    /// Sets the global rotation from Euler angles as unit `(sin, cos)` pairs.
    pub fn set_global_euler(&mut self, phi: [f64; 3]) {
        for i in 0..3 {
            self.rot_u[i] = phi[i].sin();
            self.rot_v[i] = phi[i].cos();
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pack().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    /// `[1, 0]` is male, `[0, 1]` is female.
    pub fn one_hot(self) -> [f64; 2] {
        match self {
            Gender::Male => [1.0, 0.0],
            Gender::Female => [0.0, 1.0],
        }
    }

    pub fn from_one_hot(flag: [f64; 2]) -> Result<Self> {
        match flag {
            [a, b] if a == 1.0 && b == 0.0 => Ok(Gender::Male),
            [a, b] if a == 0.0 && b == 1.0 => Ok(Gender::Female),
            _ => Err(Error::arg("gender flag must be [1,0] or [0,1]")),
        }
    }
}

/// Per-axis Euler angles from `(u, v)` pairs, each in `(-pi, pi]`.
pub fn decode_global_rotation(u: [f64; 3], v: [f64; 3]) -> Result<[f64; 3]> {
    let mut phi = [0.0; 3];
    for axis in 0..3 {
        let (ui, vi) = (u[axis], v[axis]);
        let norm = ui.hypot(vi);
        if !(norm >= MIN_ROTATION_NORM) {
            return Err(Error::InvalidRotation { axis, u: ui, v: vi });
        }
        let a = (ui / norm).atan2(vi / norm);
        phi[axis] = if a == -PI { PI } else { a };
    }
    Ok(phi)
}

pub(crate) fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub(crate) fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub(crate) fn rot_z(a: f64) -> Matrix3<f64> {
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

/// Rotation matrix for intrinsic X-Y-Z Euler angles: `Rx * Ry * Rz`.
pub fn euler_xyz_to_matrix(phi: [f64; 3]) -> Matrix3<f64> {
    rot_x(phi[0]) * rot_y(phi[1]) * rot_z(phi[2])
}

/// Partial derivatives of [`euler_xyz_to_matrix`] with respect to each angle.
pub(crate) fn euler_xyz_jacobian(phi: [f64; 3]) -> [Matrix3<f64>; 3] {
    let (rx, ry, rz) = (rot_x(phi[0]), rot_y(phi[1]), rot_z(phi[2]));
    [
        drot_x(phi[0]) * ry * rz,
        rx * drot_y(phi[1]) * rz,
        rx * ry * drot_z(phi[2]),
    ]
}

/// Inverse of [`euler_xyz_to_matrix`] away from gimbal lock.
pub fn matrix_to_euler_xyz(r: &Matrix3<f64>) -> [f64; 3] {
    let sb = r[(0, 2)].clamp(-1.0, 1.0);
    let b = sb.asin();
    let a = (-r[(1, 2)]).atan2(r[(2, 2)]);
    let c = (-r[(0, 1)]).atan2(r[(0, 0)]);
    [a, b, c]
}

fn hat(w: [f64; 3]) -> Matrix3<f64> {
    Matrix3::new(0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0)
}

/// `sin(t)/t` and `(1-cos t)/t^2` as functions of `x = t^2`, with their
/// derivatives in `x`.
fn rodrigues_coefficients(x: f64) -> (f64, f64, f64, f64) {
    if x < 1e-4 {
        let a = 1.0 - x / 6.0 + x * x / 120.0 - x * x * x / 5040.0;
        let b = 0.5 - x / 24.0 + x * x / 720.0 - x * x * x / 40320.0;
        let da = -1.0 / 6.0 + x / 60.0 - x * x / 1680.0;
        let db = -1.0 / 24.0 + x / 360.0 - x * x / 13440.0;
        (a, b, da, db)
    } else {
        let t = x.sqrt();
        let (s, c) = t.sin_cos();
        let half = (0.5 * t).sin();
        let one_minus_cos = 2.0 * half * half;
        let a = s / t;
        let b = one_minus_cos / x;
        let da = (t * c - s) / (2.0 * x * t);
        let db = (t * s - 2.0 * one_minus_cos) / (2.0 * x * x);
        (a, b, da, db)
    }
}

/// Axis-angle to rotation matrix.
pub fn axis_angle_to_matrix(w: [f64; 3]) -> Matrix3<f64> {
    let k = hat(w);
    let (a, b, _, _) = rodrigues_coefficients(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
    Matrix3::identity() + k * a + k * k * b
}

/// Axis-angle to rotation matrix together with `dR/dw_j` for each component.
pub(crate) fn axis_angle_with_jacobian(w: [f64; 3]) -> (Matrix3<f64>, [Matrix3<f64>; 3]) {
    let k = hat(w);
    let k2 = k * k;
    let (a, b, da, db) = rodrigues_coefficients(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
    let r = Matrix3::identity() + k * a + k2 * b;
    let mut jac = [Matrix3::zeros(); 3];
    for (j, d) in jac.iter_mut().enumerate() {
        let mut e = [0.0; 3];
        e[j] = 1.0;
        let ej = hat(e);
        *d = k * (2.0 * w[j] * da) + ej * a + k2 * (2.0 * w[j] * db) + (ej * k + k * ej) * b;
    }
    (r, jac)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyMesh {
    pub vertices: alloc::vec::Vec<[f64; 3]>,
    pub joints: [[f64; 3]; N_JOINTS],
}

impl BodyMesh {
    pub fn is_finite(&self) -> bool {
        self.vertices.iter().chain(self.joints.iter()).all(|p| p.iter().all(|c| c.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use core::f64::consts::FRAC_PI_2;
    use core::f64::consts::FRAC_PI_4;

    #[test]
    fn pack_zero_and_basis() {
        assert_eq!(SmplParams::default().pack(), [0.0; PARAM_DIM]);
        let mut p = SmplParams::default();
        p.beta[0] = 1.0;
        let x = p.pack();
        assert_eq!(x[0], 1.0);
        assert!(x[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pack_layout_order() {
        let mut p = SmplParams::default();
        p.theta[22][2] = 2.0;
        p.transl[0] = 3.0;
        p.rot_u[1] = 4.0;
        p.rot_v[2] = 5.0;
        let x = p.pack();
        assert_eq!(x[78], 2.0);
        assert_eq!(x[79], 3.0);
        assert_eq!(x[83], 4.0);
        assert_eq!(x[87], 5.0);
    }

    #[test]
    fn unpack_rejects_wrong_length() {
        assert!(matches!(
            SmplParams::unpack(&[0.0; 87]),
            Err(Error::ShapeMismatch { expected: 88, got: 87, .. })
        ));
    }

    #[test]
    fn decode_table() {
        assert_eq!(decode_global_rotation([0.0; 3], [1.0; 3]).unwrap(), [0.0; 3]);
        let phi = decode_global_rotation([1.0, 0.0, 0.0], [0.0, 1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(phi[0], FRAC_PI_2, epsilon = 1e-15);
        assert_eq!(&phi[1..], &[0.0, 0.0]);
        let phi = decode_global_rotation([1.0; 3], [1.0; 3]).unwrap();
        for a in phi {
            assert_abs_diff_eq!(a, FRAC_PI_4, epsilon = 1e-15);
        }
    }

    #[test]
    fn decode_rejects_degenerate_pair() {
        let err = decode_global_rotation([0.0, 1.0, 0.0], [1.0, 1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidRotation { axis: 2, .. }));
        // tiny but nonzero pairs are accepted after normalisation
        let phi = decode_global_rotation([1e-7, 0.0, 0.0], [0.0, 1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(phi[0], FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn decode_range_is_half_open() {
        let phi = decode_global_rotation([-0.0, 0.0, 0.0], [-1.0, 1.0, 1.0]).unwrap();
        assert_eq!(phi[0], PI);
    }

    #[test]
    fn gender_flags() {
        assert_eq!(Gender::Female.one_hot(), [0.0, 1.0]);
        assert_eq!(Gender::from_one_hot([1.0, 0.0]).unwrap(), Gender::Male);
        assert!(Gender::from_one_hot([1.0, 1.0]).is_err());
    }

    #[test]
    fn euler_roundtrip() {
        let phi = [0.3, -0.7, 1.9];
        let back = matrix_to_euler_xyz(&euler_xyz_to_matrix(phi));
        for i in 0..3 {
            assert_abs_diff_eq!(back[i], phi[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn rodrigues_is_orthonormal_and_matches_jacobian() {
        for w in [[0.0, 0.0, 0.0], [1e-3, -2e-3, 5e-4], [0.4, -1.2, 0.7], [2.5, 0.1, -0.3]] {
            let (r, jac) = axis_angle_with_jacobian(w);
            let rtr = r.transpose() * r;
            assert!((rtr - Matrix3::identity()).abs().max() < 1e-12);
            let h = 1e-6;
            for j in 0..3 {
                let mut wp = w;
                let mut wm = w;
                wp[j] += h;
                wm[j] -= h;
                let fd = (axis_angle_to_matrix(wp) - axis_angle_to_matrix(wm)) / (2.0 * h);
                assert!((fd - jac[j]).abs().max() < 1e-8, "w={w:?} j={j}");
            }
        }
    }

    #[test]
    fn rodrigues_quarter_turn_about_z() {
        let r = axis_angle_to_matrix([0.0, 0.0, FRAC_PI_2]);
        let expected = rot_z(FRAC_PI_2);
        assert!((r - expected).abs().max() < 1e-15);
    }
}
