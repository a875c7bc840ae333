//! Rigid-body math shared by the simulator, controller and estimators.
//!
//! Rotations are unit quaternions stored as `(w, x, y, z)`. Orientation
//! increments are rotation vectors (axis times angle, radians) expressed in
//! the world frame, which lines up with the angular rows of the geometric
//! Jacobian.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Rotation as a unit quaternion. `q` and `-q` are the same rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl UnitQuaternion {
    pub const fn identity() -> Self {
        Self {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    /// Builds a quaternion from raw components, normalizing them.
    pub fn new_normalize(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-12 {
            return Err(GeometryError::InvalidArgument(format!(
                "cannot normalize quaternion ({w}, {x}, {y}, {z})"
            )));
        }
        Ok(Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    fn renormalized(self) -> Self {
        let n = self.norm();
        Self {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n < 1e-15 || angle == 0.0 {
            return Self::identity();
        }
        let a = axis / n;
        let (s, c) = (0.5 * angle).sin_cos();
        Self {
            w: c,
            x: a.x * s,
            y: a.y * s,
            z: a.z * s,
        }
        .renormalized()
    }

    /// Exponential map: rotation vector (axis * angle) to quaternion.
    pub fn from_rotation_vector(v: &Vec3) -> Self {
        let angle = v.norm();
        if angle < 1e-12 {
            // first-order expansion keeps tiny increments exact enough
            return Self {
                w: 1.0,
                x: 0.5 * v.x,
                y: 0.5 * v.y,
                z: 0.5 * v.z,
            }
            .renormalized();
        }
        Self::from_axis_angle(&(v / angle), angle)
    }

    /// Logarithm map on the shortest branch; the angle is in `[0, pi]`.
    pub fn to_rotation_vector(&self) -> Vec3 {
        let (w, v) = if self.w < 0.0 {
            (-self.w, Vec3::new(-self.x, -self.y, -self.z))
        } else {
            (self.w, Vec3::new(self.x, self.y, self.z))
        };
        let s = v.norm();
        if s < 1e-12 {
            return 2.0 * v;
        }
        let angle = 2.0 * s.atan2(w);
        v * (angle / s)
    }

    /// Rotation about x, then y, then z (extrinsic), angles in radians.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Self {
        let qx = Self::from_axis_angle(&Vec3::x(), roll);
        let qy = Self::from_axis_angle(&Vec3::y(), pitch);
        let qz = Self::from_axis_angle(&Vec3::z(), yaw);
        qz.compose(&qy).compose(&qx)
    }

    pub fn conjugate(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn inverse(&self) -> Self {
        self.conjugate()
    }

    /// Hamilton product `self * other`, renormalized.
    pub fn compose(&self, o: &Self) -> Self {
        Self {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
        .renormalized()
    }

    pub fn dot(&self, o: &Self) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    fn neg(&self) -> Self {
        Self {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Geodesic angle between two rotations, in `[0, pi]`.
    pub fn angle_to(&self, o: &Self) -> f64 {
        let r = self.conjugate().compose(o);
        let s = (r.x * r.x + r.y * r.y + r.z * r.z).sqrt();
        2.0 * s.atan2(r.w.abs())
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        let u = Vec3::new(self.x, self.y, self.z);
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Converts a rotation matrix (orthonormal, det +1) to a quaternion.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Self {
                w: 0.25 * s,
                x: (m[(2, 1)] - m[(1, 2)]) / s,
                y: (m[(0, 2)] - m[(2, 0)]) / s,
                z: (m[(1, 0)] - m[(0, 1)]) / s,
            }
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Self {
                w: (m[(2, 1)] - m[(1, 2)]) / s,
                x: 0.25 * s,
                y: (m[(0, 1)] + m[(1, 0)]) / s,
                z: (m[(0, 2)] + m[(2, 0)]) / s,
            }
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Self {
                w: (m[(0, 2)] - m[(2, 0)]) / s,
                x: (m[(0, 1)] + m[(1, 0)]) / s,
                y: 0.25 * s,
                z: (m[(1, 2)] + m[(2, 1)]) / s,
            }
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Self {
                w: (m[(1, 0)] - m[(0, 1)]) / s,
                x: (m[(0, 2)] + m[(2, 0)]) / s,
                y: (m[(1, 2)] + m[(2, 1)]) / s,
                z: 0.25 * s,
            }
        };
        q.renormalized()
    }

    /// Rotation whose columns are the given (orthonormalized) axes.
    pub fn from_axes(x: &Vec3, y: &Vec3, z: &Vec3) -> Self {
        Self::from_matrix(&Matrix3::from_columns(&[*x, *y, *z]))
    }
}

/// Spherical linear interpolation on the shortest arc.
pub fn slerp(
    q0: &UnitQuaternion,
    q1: &UnitQuaternion,
    t: f64,
) -> Result<UnitQuaternion, GeometryError> {
    if !q0.is_finite() || !q1.is_finite() || !t.is_finite() {
        return Err(GeometryError::InvalidArgument(
            "slerp received a non-finite input".into(),
        ));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(GeometryError::InvalidArgument(format!(
            "slerp fraction {t} outside [0, 1]"
        )));
    }
    if t == 0.0 {
        return Ok(*q0);
    }
    if t == 1.0 {
        return Ok(*q1);
    }
    let mut end = *q1;
    let mut d = q0.dot(q1);
    if d < 0.0 {
        end = q1.neg();
        d = -d;
    }
    if d > 1.0 - 1e-12 {
        // nearly parallel: nlerp is exact to machine precision here
        return UnitQuaternion::new_normalize(
            q0.w + t * (end.w - q0.w),
            q0.x + t * (end.x - q0.x),
            q0.y + t * (end.y - q0.y),
            q0.z + t * (end.z - q0.z),
        );
    }
    let theta = d.min(1.0).acos();
    let s = theta.sin();
    let a = ((1.0 - t) * theta).sin() / s;
    let b = (t * theta).sin() / s;
    UnitQuaternion::new_normalize(
        a * q0.w + b * end.w,
        a * q0.x + b * end.x,
        a * q0.y + b * end.y,
        a * q0.z + b * end.z,
    )
}

/// Rigid transform: rotate, then translate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSE3 {
    pub position: Vec3,
    pub orientation: UnitQuaternion,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            position: Vec3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vec3, orientation: UnitQuaternion) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn from_translation(p: Vec3) -> Self {
        Self::new(p, UnitQuaternion::identity())
    }

    pub fn from_rotation(q: UnitQuaternion) -> Self {
        Self::new(Vec3::zeros(), q)
    }

    /// `self ∘ other`: first apply `other`, then `self`.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            position: self.position + self.orientation.rotate(&other.position),
            orientation: self.orientation.compose(&other.orientation),
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let inv = self.orientation.inverse();
        PoseSE3 {
            position: -inv.rotate(&self.position),
            orientation: inv,
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.orientation.rotate(p) + self.position
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.orientation.rotate(v)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.orientation.to_matrix()
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite()) && self.orientation.is_finite()
    }

    /// Local x, y, z axes expressed in the parent frame.
    pub fn axes(&self) -> [Vec3; 3] {
        let m = self.rotation_matrix();
        [
            m.column(0).into_owned(),
            m.column(1).into_owned(),
            m.column(2).into_owned(),
        ]
    }
}

/// Applies `frame` to a point: rotation, then translation.
pub fn transform_point(frame: &PoseSE3, p: &Vec3) -> Vec3 {
    frame.transform_point(p)
}

/// Linear interpolation of position, slerp of orientation.
pub fn pose_interpolate(
    start: &PoseSE3,
    goal: &PoseSE3,
    t: f64,
) -> Result<PoseSE3, GeometryError> {
    let orientation = slerp(&start.orientation, &goal.orientation, t)?;
    if t == 0.0 {
        return Ok(*start);
    }
    if t == 1.0 {
        return Ok(*goal);
    }
    Ok(PoseSE3 {
        position: start.position + (goal.position - start.position) * t,
        orientation,
    })
}

/// Six-dimensional displacement: translation plus world-frame rotation vector.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist6 {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl Twist6 {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Displacement that takes `from` to `to`, both in the same parent frame.
    pub fn between(from: &PoseSE3, to: &PoseSE3) -> Self {
        let dq = to.orientation.compose(&from.orientation.inverse());
        Self {
            linear: to.position - from.position,
            angular: dq.to_rotation_vector(),
        }
    }

    /// Applies this displacement to `pose` (world-frame increment).
    pub fn apply(&self, pose: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            position: pose.position + self.linear,
            orientation: UnitQuaternion::from_rotation_vector(&self.angular)
                .compose(&pose.orientation),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|v| v.is_finite())
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        ]
    }
}

/// Pitch and roll of a frame relative to the world horizontal, in radians.
///
/// Pitch is the elevation of the local x axis; roll is the rotation of the
/// local z axis about x away from world up.
pub fn pitch_roll(pose: &PoseSE3) -> (f64, f64) {
    let [x, y, z] = pose.axes();
    let pitch = x.z.clamp(-1.0, 1.0).asin();
    let roll = y.z.atan2(z.z);
    (pitch, -roll)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn quat_close(a: &UnitQuaternion, b: &UnitQuaternion, tol: f64) -> bool {
        a.angle_to(b) < tol
    }

    #[test]
    fn slerp_identical_endpoints() {
        let q = UnitQuaternion::from_euler(0.3, -0.2, 1.1);
        let r = slerp(&q, &q, 0.5).unwrap();
        assert!(quat_close(&r, &q, 1e-12));
    }

    #[test]
    fn slerp_endpoints() {
        let q0 = UnitQuaternion::from_euler(0.1, 0.2, 0.3);
        let q1 = UnitQuaternion::from_euler(-0.4, 0.9, 2.0);
        assert_eq!(slerp(&q0, &q1, 0.0).unwrap(), q0);
        assert_eq!(slerp(&q0, &q1, 1.0).unwrap(), q1);
    }

    #[test]
    fn slerp_halfway_about_z() {
        let q1 = UnitQuaternion::from_axis_angle(&Vec3::z(), FRAC_PI_2);
        let r = slerp(&UnitQuaternion::identity(), &q1, 0.5).unwrap();
        let expect = UnitQuaternion::from_axis_angle(&Vec3::z(), FRAC_PI_4);
        assert!(quat_close(&r, &expect, 1e-12));
    }

    #[test]
    fn slerp_takes_short_branch() {
        let q0 = UnitQuaternion::identity();
        let q1 = UnitQuaternion::from_axis_angle(&Vec3::z(), 0.4).neg();
        let r = slerp(&q0, &q1, 0.5).unwrap();
        assert_relative_eq!(r.angle_to(&q0), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn slerp_rejects_non_finite() {
        let bad = UnitQuaternion {
            w: f64::NAN,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        };
        assert!(slerp(&bad, &UnitQuaternion::identity(), 0.5).is_err());
        assert!(slerp(&UnitQuaternion::identity(), &UnitQuaternion::identity(), f64::NAN).is_err());
    }

    #[test]
    fn pose_interpolate_examples() {
        let start = PoseSE3::identity();
        let goal = PoseSE3::from_translation(Vec3::new(0.1, 0.0, 0.0));
        assert_eq!(pose_interpolate(&start, &goal, 0.0).unwrap(), start);
        let p = pose_interpolate(&start, &goal, 0.25).unwrap();
        assert_relative_eq!(p.position, Vec3::new(0.025, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn transform_point_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(transform_point(&PoseSE3::identity(), &p), p);
        let up = PoseSE3::from_translation(Vec3::new(0.0, 0.0, 0.1));
        assert_eq!(transform_point(&up, &Vec3::zeros()), Vec3::new(0.0, 0.0, 0.1));
        // Rz(90°) maps (1,0,0) to (0,1,0); then translate by (1,0,0).
        let frame = PoseSE3::new(
            Vec3::new(1.0, 0.0, 0.0),
            UnitQuaternion::from_axis_angle(&Vec3::z(), FRAC_PI_2),
        );
        let q = transform_point(&frame, &Vec3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(q, Vec3::new(1.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn matrix_round_trip_near_pi() {
        for axis in [Vec3::x(), Vec3::y(), Vec3::z(), Vec3::new(1.0, 1.0, 0.0)] {
            let q = UnitQuaternion::from_axis_angle(&axis, PI - 1e-9);
            let back = UnitQuaternion::from_matrix(&q.to_matrix());
            assert!(quat_close(&q, &back, 1e-7));
        }
    }

    #[test]
    fn rotation_vector_round_trip() {
        let v = Vec3::new(0.3, -1.2, 0.7);
        let q = UnitQuaternion::from_rotation_vector(&v);
        assert_relative_eq!(q.to_rotation_vector(), v, epsilon = 1e-12);
    }

    #[test]
    fn twist_between_then_apply() {
        let a = PoseSE3::new(Vec3::new(0.1, 0.2, 0.3), UnitQuaternion::from_euler(0.1, 0.2, 0.3));
        let b = PoseSE3::new(Vec3::new(-0.1, 0.5, 0.0), UnitQuaternion::from_euler(-0.5, 0.1, 1.3));
        let tw = Twist6::between(&a, &b);
        let c = tw.apply(&a);
        assert_relative_eq!(c.position, b.position, epsilon = 1e-12);
        assert!(quat_close(&c.orientation, &b.orientation, 1e-12));
        assert_eq!(Twist6::zero().apply(&a), PoseSE3 { ..a });
    }

    #[test]
    fn pitch_roll_of_level_and_tilted() {
        let (p, r) = pitch_roll(&PoseSE3::identity());
        assert_eq!((p, r), (0.0, 0.0));
        let nose_down = PoseSE3::from_rotation(UnitQuaternion::from_axis_angle(&Vec3::y(), 0.3));
        let (p, r) = pitch_roll(&nose_down);
        assert_relative_eq!(p, -0.3, epsilon = 1e-12);
        assert_relative_eq!(r, 0.0, epsilon = 1e-12);
        let rolled = PoseSE3::from_rotation(UnitQuaternion::from_axis_angle(&Vec3::x(), 0.2));
        let (_, r) = pitch_roll(&rolled);
        assert_relative_eq!(r.abs(), 0.2, epsilon = 1e-12);
    }

    fn arb_quat() -> impl Strategy<Value = UnitQuaternion> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| UnitQuaternion::new_normalize(w, x, y, z).unwrap())
    }

    fn arb_vec() -> impl Strategy<Value = Vec3> {
        (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    fn arb_pose() -> impl Strategy<Value = PoseSE3> {
        (arb_vec(), arb_quat()).prop_map(|(p, q)| PoseSE3::new(p, q))
    }

    proptest! {
        #[test]
        fn slerp_stays_unit(q0 in arb_quat(), q1 in arb_quat(), t in 0.0..=1.0f64) {
            let r = slerp(&q0, &q1, t).unwrap();
            prop_assert!((r.norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn slerp_constant_angular_rate(q0 in arb_quat(), q1 in arb_quat(), t in 0.0..=1.0f64) {
            let total = q0.angle_to(&q1);
            let r = slerp(&q0, &q1, t).unwrap();
            prop_assert!((q0.angle_to(&r) - t * total).abs() < 1e-7);
        }

        #[test]
        fn compose_matches_nested_transform(a in arb_pose(), b in arb_pose(), p in arb_vec()) {
            let lhs = a.compose(&b).transform_point(&p);
            let rhs = a.transform_point(&b.transform_point(&p));
            prop_assert!((lhs - rhs).norm() < 1e-9);
        }

        #[test]
        fn compose_with_inverse_is_identity(a in arb_pose()) {
            let id = a.compose(&a.inverse());
            prop_assert!(id.position.norm() < 1e-9);
            prop_assert!(id.orientation.angle_to(&UnitQuaternion::identity()) < 1e-7);
            prop_assert!((id.orientation.norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn interpolation_angle_monotone(a in arb_pose(), b in arb_pose()) {
            let mut last = 0.0;
            for k in 0..=20 {
                let t = k as f64 / 20.0;
                let p = pose_interpolate(&a, &b, t).unwrap();
                let ang = a.orientation.angle_to(&p.orientation);
                prop_assert!(ang + 1e-9 >= last);
                last = ang;
            }
        }

        #[test]
        fn midpoint_is_mean(a in arb_pose(), b in arb_pose()) {
            let p = pose_interpolate(&a, &b, 0.5).unwrap();
            let mean = (a.position + b.position) * 0.5;
            prop_assert!((p.position - mean).norm() < 1e-12);
        }
    }
}
