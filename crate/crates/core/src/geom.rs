//! Poses, twists, wrenches and timed samples shared by every stage of the stack.
//!
//! Public units are millimetres, degrees and seconds. Orientation is held as a
//! unit quaternion; the Euler view is intrinsic X-Y-Z, i.e.
//! `R = Rx(alpha) * Ry(beta) * Rz(gamma)`, in degrees.

use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("time {t} outside interpolation interval [{start}, {end}]")]
    OutOfInterval { t: f64, start: f64, end: f64 },
    #[error("interpolation interval is empty or reversed: [{start}, {end}]")]
    InvalidInterval { start: f64, end: f64 },
    #[error("quaternion is degenerate (norm {0})")]
    DegenerateQuaternion(f64),
}

/// Wraps an angle in degrees into `(-180, 180]`.
pub fn wrap_deg(angle: f64) -> f64 {
    let mut a = angle % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

/// Rotation angle of `q` in degrees, in `[0, 180]`.
///
/// Uses `atan2` on the vector part, which stays accurate for the sub-millidegree
/// increments produced at 10 kHz where `acos(w)` would not.
pub fn rotation_angle_deg(q: &UnitQuaternion<f64>) -> f64 {
    let w = q.scalar().abs();
    let s = q.vector().norm();
    (2.0 * s.atan2(w)).to_degrees()
}

/// Rotation vector (axis times angle, degrees) of the shortest rotation equal to `q`.
pub fn log_deg(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let (w, v) = if q.scalar() < 0.0 {
        (-q.scalar(), -q.vector().into_owned())
    } else {
        (q.scalar(), q.vector().into_owned())
    };
    let s = v.norm();
    if s == 0.0 {
        return Vector3::zeros();
    }
    let angle = 2.0 * s.atan2(w);
    v * (angle.to_degrees() / s)
}

/// Inverse of [`log_deg`].
pub fn exp_deg(rv: &Vector3<f64>) -> UnitQuaternion<f64> {
    let angle = rv.norm().to_radians();
    if angle == 0.0 {
        return UnitQuaternion::identity();
    }
    let half = 0.5 * angle;
    let axis = rv / rv.norm();
    let v = axis * half.sin();
    UnitQuaternion::new_unchecked(Quaternion::new(half.cos(), v.x, v.y, v.z))
}

/// Raises a rotation to a real power along the shortest arc.
pub fn scale_rotation(q: &UnitQuaternion<f64>, s: f64) -> UnitQuaternion<f64> {
    exp_deg(&(log_deg(q) * s))
}

/// Spherical interpolation along the shortest arc. Endpoints are returned unchanged.
pub fn slerp(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, u: f64) -> UnitQuaternion<f64> {
    if u == 0.0 {
        return *a;
    }
    if u == 1.0 {
        return *b;
    }
    let rel = a.inverse() * b;
    renormalize(&(a * scale_rotation(&rel, u)))
}

pub(crate) fn renormalize(q: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

fn axis_rotation(axis: Vector3<f64>, deg: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Unit::new_unchecked(axis), deg.to_radians())
}

/// 6-DOF pose: translation in millimetres plus orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 7]", try_from = "[f64; 7]")]
pub struct Pose6 {
    pub p: Vector3<f64>,
    pub q: UnitQuaternion<f64>,
}

impl Default for Pose6 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose6 {
    pub fn identity() -> Self {
        Self { p: Vector3::zeros(), q: UnitQuaternion::identity() }
    }

    pub fn new(p: Vector3<f64>, q: UnitQuaternion<f64>) -> Self {
        Self { p, q: renormalize(&q) }
    }

    pub fn from_translation(p: Vector3<f64>) -> Self {
        Self { p, q: UnitQuaternion::identity() }
    }

    /// Builds a pose from translation (mm) and intrinsic X-Y-Z Euler angles (deg).
    pub fn from_euler_deg(p: Vector3<f64>, euler: Vector3<f64>) -> Self {
        let q = axis_rotation(Vector3::x(), euler.x)
            * axis_rotation(Vector3::y(), euler.y)
            * axis_rotation(Vector3::z(), euler.z);
        Self::new(p, q)
    }

    /// `[x, y, z, alpha, beta, gamma]` in mm and degrees.
    pub fn from_array6(v: [f64; 6]) -> Self {
        Self::from_euler_deg(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))
    }

    /// Intrinsic X-Y-Z Euler angles in degrees.
    pub fn euler_deg(&self) -> Vector3<f64> {
        let r = self.q.to_rotation_matrix();
        let m = r.matrix();
        let beta = m[(0, 2)].atan2((m[(0, 0)] * m[(0, 0)] + m[(0, 1)] * m[(0, 1)]).sqrt());
        let alpha = (-m[(1, 2)]).atan2(m[(2, 2)]);
        let gamma = (-m[(0, 1)]).atan2(m[(0, 0)]);
        Vector3::new(alpha.to_degrees(), beta.to_degrees(), gamma.to_degrees())
    }

    pub fn to_array6(&self) -> [f64; 6] {
        let e = self.euler_deg();
        [self.p.x, self.p.y, self.p.z, e.x, e.y, e.z]
    }

    /// `[x, y, z, qw, qx, qy, qz]`, the wire representation.
    pub fn to_pose7(&self) -> [f64; 7] {
        let q = self.q.quaternion();
        [self.p.x, self.p.y, self.p.z, q.w, q.i, q.j, q.k]
    }

    pub fn from_pose7(v: [f64; 7]) -> Result<Self, GeomError> {
        let raw = Quaternion::new(v[3], v[4], v[5], v[6]);
        let n = raw.norm();
        if !n.is_finite() || n < 1e-9 {
            return Err(GeomError::DegenerateQuaternion(n));
        }
        // Already-unit inputs are taken verbatim so that logged poses replay bit-exactly.
        let q = if (n - 1.0).abs() <= 1e-12 {
            UnitQuaternion::new_unchecked(raw)
        } else {
            UnitQuaternion::new_normalize(raw)
        };
        Ok(Self { p: Vector3::new(v[0], v[1], v[2]), q })
    }

    /// Maps a point expressed in this pose's frame into the parent frame.
    pub fn transform_point(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.p + self.q * local
    }

    pub fn translated(&self, dp: &Vector3<f64>) -> Self {
        Self { p: self.p + dp, q: self.q }
    }

    /// Applies a world-frame rotation increment given as a rotation vector in degrees.
    pub fn rotated(&self, rv_deg: &Vector3<f64>) -> Self {
        Self { p: self.p, q: renormalize(&(exp_deg(rv_deg) * self.q)) }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().all(|x| x.is_finite()) && self.q.coords.iter().all(|x| x.is_finite())
    }
}

impl From<Pose6> for [f64; 7] {
    fn from(p: Pose6) -> Self {
        p.to_pose7()
    }
}

impl TryFrom<[f64; 7]> for Pose6 {
    type Error = GeomError;

    fn try_from(v: [f64; 7]) -> Result<Self, Self::Error> {
        Pose6::from_pose7(v)
    }
}

/// Translation difference and minimal per-axis Euler difference from `a` to `b`.
///
/// Each angular component lies in `(-180, 180]`.
pub fn pose_delta(a: &Pose6, b: &Pose6) -> (Vector3<f64>, Vector3<f64>) {
    let dp = b.p - a.p;
    let de = b.euler_deg() - a.euler_deg();
    (dp, de.map(wrap_deg))
}

/// Linear velocity (mm/s) and world-frame angular velocity (deg/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
}

impl Twist {
    pub fn new(v: Vector3<f64>, w: Vector3<f64>) -> Self {
        Self { v, w }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Finite-difference twist carrying `a` to `b` over `dt` seconds.
    pub fn between(a: &Pose6, b: &Pose6, dt: f64) -> Self {
        Self { v: (b.p - a.p) / dt, w: log_deg(&(b.q * a.q.inverse())) / dt }
    }

    pub fn linear_speed(&self) -> f64 {
        self.v.norm()
    }

    pub fn angular_speed(&self) -> f64 {
        self.w.norm()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { v: self.v * k, w: self.w * k }
    }

    /// `[vx, vy, vz, wx, wy, wz]`, the column order of the manipulator Jacobian.
    pub fn to_array(&self) -> [f64; 6] {
        [self.v.x, self.v.y, self.v.z, self.w.x, self.w.y, self.w.z]
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().chain(self.w.iter()).all(|x| x.is_finite())
    }
}

/// Force (N) and torque (N·m).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn new(force: Vector3<f64>, torque: Vector3<f64>) -> Self {
        Self { force, torque }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Clips the force and torque magnitudes, keeping their directions.
    pub fn saturated(&self, f_max: f64, tau_max: f64) -> Self {
        Self { force: clip_norm(&self.force, f_max), torque: clip_norm(&self.torque, tau_max) }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.force.x,
            self.force.y,
            self.force.z,
            self.torque.x,
            self.torque.y,
            self.torque.z,
        ]
    }
}

pub(crate) fn clip_norm(v: &Vector3<f64>, max: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > max && n > 0.0 {
        let mut out = v * (max / n);
        // Rounding can leave the scaled norm an ulp above the cap.
        while out.norm() > max {
            out *= 1.0 - f64::EPSILON;
        }
        out
    } else {
        *v
    }
}

/// A pose stamped with the time (s) of its stream's clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedSample {
    pub t: f64,
    pub pose: Pose6,
}

impl TimedSample {
    pub fn new(t: f64, pose: Pose6) -> Self {
        Self { t, pose }
    }
}

/// True when timestamps strictly increase.
pub fn is_strictly_increasing(samples: &[TimedSample]) -> bool {
    samples.windows(2).all(|w| w[1].t > w[0].t)
}

/// Interpolates between two samples: linear on translation, shortest-arc slerp on orientation.
pub fn lerp_pose(a: &TimedSample, b: &TimedSample, t: f64) -> Result<Pose6, GeomError> {
    if !(a.t < b.t) {
        return Err(GeomError::InvalidInterval { start: a.t, end: b.t });
    }
    if !(t >= a.t && t <= b.t) {
        return Err(GeomError::OutOfInterval { t, start: a.t, end: b.t });
    }
    let u = (t - a.t) / (b.t - a.t);
    Ok(interpolate(&a.pose, &b.pose, u))
}

/// Pose interpolation by fraction `u` in `[0, 1]`; exact at both endpoints on translation.
pub fn interpolate(a: &Pose6, b: &Pose6, u: f64) -> Pose6 {
    if u == 1.0 {
        return *b;
    }
    // Difference form: interpolating between equal poses returns them exactly.
    let p = a.p + (b.p - a.p) * u;
    Pose6 { p, q: slerp(&a.q, &b.q, u) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pose(x: f64, y: f64, z: f64, a: f64, b: f64, g: f64) -> Pose6 {
        Pose6::from_array6([x, y, z, a, b, g])
    }

    #[test]
    fn wrap_covers_half_open_interval() {
        assert_eq!(wrap_deg(180.0), 180.0);
        assert_eq!(wrap_deg(-180.0), 180.0);
        assert_eq!(wrap_deg(358.0), -2.0);
        assert_eq!(wrap_deg(-358.0), 2.0);
        assert_eq!(wrap_deg(0.0), 0.0);
    }

    #[test]
    fn euler_matches_explicit_matrix_product() {
        let (a, b, g) = (20f64.to_radians(), -35f64.to_radians(), 60f64.to_radians());
        let rx = nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, a.cos(), -a.sin(), 0.0, a.sin(), a.cos());
        let ry = nalgebra::Matrix3::new(b.cos(), 0.0, b.sin(), 0.0, 1.0, 0.0, -b.sin(), 0.0, b.cos());
        let rz = nalgebra::Matrix3::new(g.cos(), -g.sin(), 0.0, g.sin(), g.cos(), 0.0, 0.0, 0.0, 1.0);
        let expected = rx * ry * rz;
        let p = pose(0.0, 0.0, 0.0, 20.0, -35.0, 60.0);
        let got = p.q.to_rotation_matrix().into_inner();
        assert!((got - expected).abs().max() < 1e-14);
    }

    #[test]
    fn delta_of_identical_poses_is_zero() {
        let a = pose(1.0, 2.0, 3.0, 10.0, -20.0, 170.0);
        let (dp, dt) = pose_delta(&a, &a);
        assert_eq!(dp, Vector3::zeros());
        assert_eq!(dt, Vector3::zeros());
    }

    #[test]
    fn delta_pure_translation() {
        let a = pose(0.0, 0.0, 0.0, 5.0, 6.0, 7.0);
        let b = pose(1.0, 2.0, 3.0, 5.0, 6.0, 7.0);
        let (dp, dt) = pose_delta(&a, &b);
        assert_eq!(dp, Vector3::new(1.0, 2.0, 3.0));
        assert!(dt.abs().max() < 1e-12);
    }

    #[test]
    fn delta_wraps_across_180() {
        let a = pose(0.0, 0.0, 0.0, 0.0, 0.0, 179.0);
        let b = pose(0.0, 0.0, 0.0, 0.0, 0.0, -179.0);
        let (_, dt) = pose_delta(&a, &b);
        assert!((dt.z - 2.0).abs() < 1e-9, "{dt}");
        // Oracle: the relative rotation is a 2 degree turn about z.
        let rel = a.q.inverse() * b.q;
        assert!((rotation_angle_deg(&rel) - 2.0).abs() < 1e-9);
        let axis = log_deg(&rel).normalize();
        assert!((axis - Vector3::z()).norm() < 1e-9);
    }

    #[test]
    fn lerp_endpoints_and_midpoint() {
        let a = TimedSample::new(1.0, pose(0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let b = TimedSample::new(2.0, pose(10.0, 0.0, 0.0, 0.0, 0.0, 90.0));
        assert_eq!(lerp_pose(&a, &b, 1.0).unwrap(), a.pose);
        let end = lerp_pose(&a, &b, 2.0).unwrap();
        assert_eq!(end.p, b.pose.p);
        let mid = lerp_pose(&a, &b, 1.5).unwrap();
        assert_eq!(mid.p.x, 5.0);
        // Oracle: the half-angle quaternion about z.
        let half = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 45f64.to_radians());
        assert!(mid.q.angle_to(&half) < 1e-12);
        assert!((mid.euler_deg().z - 45.0).abs() < 1e-9);
    }

    #[test]
    fn lerp_rejects_outside_interval() {
        let a = TimedSample::new(0.0, Pose6::identity());
        let b = TimedSample::new(1.0, Pose6::identity());
        assert!(matches!(lerp_pose(&a, &b, 1.5), Err(GeomError::OutOfInterval { .. })));
        assert!(matches!(lerp_pose(&b, &a, 0.5), Err(GeomError::InvalidInterval { .. })));
    }

    #[test]
    fn slerp_takes_shortest_arc() {
        let a = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 170f64.to_radians());
        let b = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -170f64.to_radians());
        let mid = slerp(&a, &b, 0.5);
        assert!((rotation_angle_deg(&mid) - 180.0).abs() < 1e-9);
    }

    #[test]
    fn tiny_rotation_angles_are_accurate() {
        let rv = Vector3::new(1e-4, -2e-5, 3e-5);
        let q = exp_deg(&rv);
        assert!((log_deg(&q) - rv).norm() < 1e-18);
        assert!((rotation_angle_deg(&q) - rv.norm()).abs() < 1e-18);
    }

    #[test]
    fn wrench_saturation_keeps_direction() {
        let w = Wrench::new(Vector3::new(30.0, 40.0, 0.0), Vector3::new(0.0, 0.0, -1.0));
        let s = w.saturated(15.0, 0.3);
        assert!((s.force.norm() - 15.0).abs() < 1e-12);
        assert!((s.force.normalize() - w.force.normalize()).norm() < 1e-12);
        assert!((s.torque.z + 0.3).abs() < 1e-12);
    }

    #[test]
    fn pose7_roundtrip_is_bit_exact() {
        let p = pose(1.5, -2.25, 300.125, 12.0, -7.0, 33.0);
        let json = serde_json::to_string(&p).unwrap();
        let back: Pose6 = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_pose7(), p.to_pose7());
    }

    fn arb_pose(beta_max: f64) -> impl Strategy<Value = Pose6> {
        (
            -500.0..500.0f64,
            -500.0..500.0f64,
            -500.0..500.0f64,
            -179.9..179.9f64,
            -beta_max..beta_max,
            -179.9..179.9f64,
        )
            .prop_map(|(x, y, z, a, b, g)| pose(x, y, z, a, b, g))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn delta_with_itself_is_exactly_zero(a in arb_pose(89.0)) {
            let (dp, dt) = pose_delta(&a, &a);
            prop_assert_eq!(dp, Vector3::zeros());
            prop_assert_eq!(dt, Vector3::zeros());
        }

        #[test]
        fn euler_roundtrip(a in -179.9..179.9f64, b in -85.0..85.0f64, g in -179.9..179.9f64) {
            let p = pose(0.0, 0.0, 0.0, a, b, g);
            let e = p.euler_deg();
            prop_assert!((e.x - a).abs() < 1e-9 && (e.y - b).abs() < 1e-9 && (e.z - g).abs() < 1e-9,
                "{:?} vs {:?}", e, (a, b, g));
            prop_assert!((p.q.norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn lerp_reproduces_endpoints(p0 in arb_pose(80.0), p1 in arb_pose(80.0), t0 in -10.0..10.0f64, dt in 1e-3..5.0f64) {
            let a = TimedSample::new(t0, p0);
            let b = TimedSample::new(t0 + dt, p1);
            let s = lerp_pose(&a, &b, a.t).unwrap();
            let e = lerp_pose(&a, &b, b.t).unwrap();
            prop_assert_eq!(s.p, p0.p);
            prop_assert_eq!(e.p, p1.p);
            prop_assert!(s.q.angle_to(&p0.q) < 1e-12);
            prop_assert!(e.q.angle_to(&p1.q) < 1e-12);
        }

        #[test]
        fn composed_rotations_stay_normalised(p0 in arb_pose(80.0), rv in prop::array::uniform3(-30.0..30.0f64)) {
            let mut p = p0;
            for _ in 0..100 {
                p = p.rotated(&Vector3::from(rv));
            }
            prop_assert!((p.q.norm() - 1.0).abs() < 1e-12);
        }
    }
}
