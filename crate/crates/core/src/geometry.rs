//! Rigid-body pose algebra.
//!
//! Conventions:
//! - Euler angles are intrinsic Z-Y-X (yaw, then pitch, then roll):
//!   `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
//! - A [`PoseSE3`] maps body-frame coordinates into the world frame.
//! - A [`RelativePose`] between poses `a` and `b` is expressed in the frame of `a`,
//!   so that `a.compose(&rel.to_pose()) == b`.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Distance from ±π/2 pitch inside which the Euler decomposition is flagged as gimbal-locked.
pub const GIMBAL_TOLERANCE: f64 = 1e-9;

/// Wrap an angle into (−π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle - TAU * (angle / TAU).round();
    if a <= -PI {
        a += TAU;
    } else if a > PI {
        a -= TAU;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub const ZERO: EulerAngles = EulerAngles {
        roll: 0.0,
        pitch: 0.0,
        yaw: 0.0,
    };

    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.roll, self.pitch, self.yaw]
    }

    pub fn is_finite(&self) -> bool {
        self.roll.is_finite() && self.pitch.is_finite() && self.yaw.is_finite()
    }

    pub fn to_rotmat(&self) -> RotMat3 {
        euler_to_rotmat(*self)
    }
}

/// Result of decomposing a rotation into Euler angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerDecomposition {
    pub angles: EulerAngles,
    /// Set when pitch is within [`GIMBAL_TOLERANCE`] of ±π/2. Roll is then pinned
    /// to zero and the remaining freedom is folded into yaw.
    pub gimbal_lock: bool,
}

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotMat3(Matrix3<f64>);

impl RotMat3 {
    pub fn identity() -> Self {
        RotMat3(Matrix3::identity())
    }

    /// Validate and wrap a matrix. Fails unless `RᵀR = I` and `det R = 1` within 1e-9.
    pub fn new(m: Matrix3<f64>) -> crate::Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(crate::Error::InvalidInput("non-finite rotation".into()));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).amax();
        let det = m.determinant();
        if ortho >= ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(crate::Error::InvalidInput(format!(
                "not a rotation: orthogonality error {ortho:e}, det {det}"
            )));
        }
        Ok(RotMat3(m))
    }

    /// Project an arbitrary 3×3 matrix onto SO(3) (nearest rotation in Frobenius norm).
    pub fn orthonormalize(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        RotMat3(u * d * v_t)
    }

    pub fn about_z(angle: f64) -> Self {
        euler_to_rotmat(EulerAngles::new(0.0, 0.0, angle))
    }

    /// Rotation by `angle` radians about the unit `axis` (Rodrigues).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::identity();
        }
        let k = axis / n;
        let kx = k.cross_matrix();
        RotMat3(Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos()))
    }

    /// Rotation vector (axis × angle) of this rotation, angle in [0, π].
    pub fn log(&self) -> Vec3 {
        let q = UnitQuaternion::from_matrix(&self.0);
        q.scaled_axis()
    }

    pub fn exp(omega: &Vec3) -> Self {
        Self::from_axis_angle(omega, omega.norm())
    }

    /// Rotation angle in [0, π].
    pub fn angle(&self) -> f64 {
        let c = ((self.0.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        RotMat3(self.0.transpose())
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.0)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Self {
        RotMat3(q.to_rotation_matrix().into_inner())
    }

    pub fn to_euler(&self) -> EulerDecomposition {
        rotmat_to_euler(self)
    }

    /// Spherical-linear interpolation from `self` (s = 0) to `other` (s = 1).
    pub fn slerp(&self, other: &RotMat3, s: f64) -> RotMat3 {
        let delta = self.transpose() * *other;
        *self * RotMat3::exp(&(delta.log() * s))
    }
}

impl std::ops::Mul for RotMat3 {
    type Output = RotMat3;
    fn mul(self, rhs: RotMat3) -> RotMat3 {
        RotMat3(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vec3> for RotMat3 {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl std::ops::Mul<&Vec3> for &RotMat3 {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

pub fn euler_to_rotmat(r: EulerAngles) -> RotMat3 {
    let (sr, cr) = r.roll.sin_cos();
    let (sp, cp) = r.pitch.sin_cos();
    let (sy, cy) = r.yaw.sin_cos();
    RotMat3(Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    ))
}

pub fn rotmat_to_euler(r: &RotMat3) -> EulerDecomposition {
    let m = &r.0;
    let pitch = (-m[(2, 0)]).atan2((m[(0, 0)].powi(2) + m[(1, 0)].powi(2)).sqrt());
    if (std::f64::consts::FRAC_PI_2 - pitch.abs()) < GIMBAL_TOLERANCE {
        let yaw = (-m[(0, 1)]).atan2(m[(1, 1)]);
        return EulerDecomposition {
            angles: EulerAngles::new(0.0, pitch, wrap_angle(yaw)),
            gimbal_lock: true,
        };
    }
    let roll = m[(2, 1)].atan2(m[(2, 2)]);
    let yaw = m[(1, 0)].atan2(m[(0, 0)]);
    EulerDecomposition {
        angles: EulerAngles::new(wrap_angle(roll), pitch, wrap_angle(yaw)),
        gimbal_lock: false,
    }
}

/// Rigid transform mapping body coordinates to world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    pub rotation: RotMat3,
    pub translation: Vec3,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn new(rotation: RotMat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(RotMat3::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(RotMat3::identity(), t)
    }

    pub fn from_euler(t: Vec3, r: EulerAngles) -> Self {
        Self::new(euler_to_rotmat(r), t)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        compose(self, other)
    }

    pub fn inverse(&self) -> PoseSE3 {
        inverse(self)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        &self.rotation * p + self.translation
    }

    /// Largest entry-wise deviation between two poses (rotation and translation).
    pub fn max_abs_diff(&self, other: &PoseSE3) -> f64 {
        let dr = (self.rotation.matrix() - other.rotation.matrix()).amax();
        let dt = (self.translation - other.translation).amax();
        dr.max(dt)
    }
}

pub fn compose(a: &PoseSE3, b: &PoseSE3) -> PoseSE3 {
    PoseSE3 {
        rotation: a.rotation * b.rotation,
        translation: &a.rotation * &b.translation + a.translation,
    }
}

pub fn inverse(p: &PoseSE3) -> PoseSE3 {
    let rt = p.rotation.transpose();
    PoseSE3 {
        rotation: rt,
        translation: -(&rt * &p.translation),
    }
}

pub fn transform_points(p: &PoseSE3, pts: &[Vec3]) -> Vec<Vec3> {
    pts.iter().map(|q| p.transform_point(q)).collect()
}

/// 6-DoF egomotion `[t, r]` with the rotation as Euler angles.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelativePose {
    pub t: Vec3,
    pub r: EulerAngles,
}

impl RelativePose {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(t: Vec3, r: EulerAngles) -> Self {
        Self { t, r }
    }

    pub fn to_pose(&self) -> PoseSE3 {
        PoseSE3::new(euler_to_rotmat(self.r), self.t)
    }

    /// `[tx, ty, tz, roll, pitch, yaw]`.
    pub fn to_vector(&self) -> [f64; 6] {
        [
            self.t.x,
            self.t.y,
            self.t.z,
            self.r.roll,
            self.r.pitch,
            self.r.yaw,
        ]
    }

    pub fn from_vector(v: &[f64]) -> Self {
        assert!(v.len() >= 6, "relative pose vector needs 6 entries");
        Self {
            t: Vec3::new(v[0], v[1], v[2]),
            r: EulerAngles::new(v[3], v[4], v[5]),
        }
    }

    /// Decompose an SE(3) pose, returning the gimbal-lock flag alongside.
    pub fn from_pose(p: &PoseSE3) -> (Self, bool) {
        let dec = rotmat_to_euler(&p.rotation);
        (
            Self {
                t: p.translation,
                r: dec.angles,
            },
            dec.gimbal_lock,
        )
    }
}

/// Relative motion from `a` to `b`, expressed in the frame of `a`.
pub fn relative_between(a: &PoseSE3, b: &PoseSE3) -> (RelativePose, bool) {
    RelativePose::from_pose(&compose(&inverse(a), b))
}
