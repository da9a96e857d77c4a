//! Kinematics of the 3-armed 6-DOF parallel follower.
//!
//! Each arm is an R-U-P-S chain: an active revolute joint on the fixed ring
//! with axis `e_i` tangent to the ring, a universal joint, an active prismatic
//! joint and a spherical joint on the moving ring. The revolute angle is the
//! angle of the leg vector in the arm's `(m_i, n_i)` plane; the universal joint
//! absorbs the out-of-plane component along `e_i`.
//!
//! Arm frames: `m_i` is the fixed-ring normal (world z), `n_i` points radially
//! inward from the base anchor and `e_i = m_i x n_i`.
//!
//! Jacobian rows are `[th1, th2, th3, d1, d2, d3]` (deg/s, mm/s) and columns are
//! `[vx, vy, vz, wx, wy, wz]` (mm/s, world-frame deg/s).

use nalgebra::{Matrix6, UnitQuaternion, Vector3, Vector6};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{exp_deg, renormalize, wrap_deg, Pose6};

/// Legs shorter than this are treated as degenerate.
pub const DEGENERATE_LEG_MM: f64 = 1e-6;
/// Condition number above which a Jacobian is flagged singular.
pub const SINGULAR_CONDITION: f64 = 1e12;
/// Forward-kinematics residual tolerance (mm and deg mixed).
pub const FK_TOLERANCE: f64 = 1e-9;
pub const FK_MAX_ITERATIONS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RsrError {
    #[error("arm {arm}: leg length below {DEGENERATE_LEG_MM} mm")]
    DegenerateLeg { arm: usize },
    #[error("forward kinematics did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("invalid follower geometry: {0}")]
    InvalidGeometry(String),
}

/// User-facing geometry parameters (mm, deg).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RsrGeometryConfig {
    pub fixed_radius: f64,
    pub moving_radius: f64,
    /// Anchor angle of each arm on the fixed ring.
    pub base_angles_deg: [f64; 3],
    /// Anchor angle of each arm on the moving ring. Offsetting these from the
    /// base angles keeps the home pose away from the yaw singularity that
    /// occurs when every leg lies in its own `(m, n)` plane.
    pub platform_angles_deg: [f64; 3],
    pub d_min: f64,
    pub d_max: f64,
    /// Half-angle of the spherical-joint cone.
    pub cone_limit_deg: f64,
    /// Spherical-joint reference axis per anchor, in the moving-ring frame.
    pub sphere_axes: [[f64; 3]; 3],
    /// `[min, max]` of the revolute joints.
    pub theta_limits_deg: [f64; 2],
    /// Height of the moving ring at the home pose. Defaults to the height that
    /// puts every prismatic joint at mid-stroke.
    pub home_height: Option<f64>,
}

impl Default for RsrGeometryConfig {
    fn default() -> Self {
        Self {
            fixed_radius: 180.0,
            moving_radius: 120.0,
            base_angles_deg: [90.0, 210.0, 330.0],
            platform_angles_deg: [105.0, 225.0, 345.0],
            d_min: 214.0,
            d_max: 354.0,
            cone_limit_deg: 25.0,
            sphere_axes: [[0.0, 0.0, 1.0]; 3],
            theta_limits_deg: [-60.0, 60.0],
            home_height: None,
        }
    }
}

/// Precomputed arm data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arm {
    /// Base anchor, world frame.
    pub base: Vector3<f64>,
    /// Platform anchor, moving-ring frame.
    pub platform: Vector3<f64>,
    pub m: Vector3<f64>,
    pub n: Vector3<f64>,
    pub e: Vector3<f64>,
    /// Spherical-joint reference axis, moving-ring frame (unit).
    pub sphere_axis: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RsrGeometryConfig", into = "RsrGeometryConfig")]
pub struct RsrGeometry {
    config: RsrGeometryConfig,
    arms: [Arm; 3],
    home_height: f64,
}

impl Default for RsrGeometry {
    fn default() -> Self {
        Self::new(RsrGeometryConfig::default()).expect("default geometry is valid")
    }
}

impl TryFrom<RsrGeometryConfig> for RsrGeometry {
    type Error = RsrError;

    fn try_from(c: RsrGeometryConfig) -> Result<Self, Self::Error> {
        Self::new(c)
    }
}

impl From<RsrGeometry> for RsrGeometryConfig {
    fn from(g: RsrGeometry) -> Self {
        g.config
    }
}

impl RsrGeometry {
    pub fn new(config: RsrGeometryConfig) -> Result<Self, RsrError> {
        let bad = |msg: String| Err(RsrError::InvalidGeometry(msg));
        let c = &config;
        if !(c.fixed_radius > 0.0 && c.moving_radius > 0.0) {
            return bad("ring radii must be positive".into());
        }
        if !(c.d_min > 0.0 && c.d_min < c.d_max) {
            return bad(format!("need 0 < d_min < d_max, got [{}, {}]", c.d_min, c.d_max));
        }
        if !(c.cone_limit_deg > 0.0 && c.cone_limit_deg < 180.0) {
            return bad("cone_limit_deg must be in (0, 180)".into());
        }
        if !(c.theta_limits_deg[0] < c.theta_limits_deg[1]) {
            return bad("theta_limits_deg must be [min, max] with min < max".into());
        }
        let mid = 0.5 * (c.d_min + c.d_max);
        // Horizontal base-to-platform anchor distance at home, equal for all arms
        // when the angular offsets are equal.
        let offset = (c.platform_angles_deg[0] - c.base_angles_deg[0]).to_radians();
        let radial = (c.fixed_radius.powi(2) + c.moving_radius.powi(2)
            - 2.0 * c.fixed_radius * c.moving_radius * offset.cos())
        .sqrt();
        let home_height = match c.home_height {
            Some(h) if h > 0.0 && h.is_finite() => h,
            Some(h) => return bad(format!("home_height must be positive, got {h}")),
            None if radial < mid => (mid * mid - radial * radial).sqrt(),
            None => return bad("home anchor offset exceeds mid-stroke leg length".into()),
        };

        let mut arms = [Arm {
            base: Vector3::zeros(),
            platform: Vector3::zeros(),
            m: Vector3::z(),
            n: Vector3::zeros(),
            e: Vector3::zeros(),
            sphere_axis: Vector3::z(),
        }; 3];
        for (i, arm) in arms.iter_mut().enumerate() {
            let (s, co) = c.base_angles_deg[i].to_radians().sin_cos();
            let radial = Vector3::new(co, s, 0.0);
            let (sp, cp) = c.platform_angles_deg[i].to_radians().sin_cos();
            let axis = Vector3::from(c.sphere_axes[i]);
            if !(axis.norm() > 0.0) {
                return bad(format!("sphere axis {i} must be nonzero"));
            }
            arm.base = radial * c.fixed_radius;
            arm.platform = Vector3::new(cp, sp, 0.0) * c.moving_radius;
            arm.m = Vector3::z();
            arm.n = -radial;
            arm.e = arm.m.cross(&arm.n);
            arm.sphere_axis = axis.normalize();
        }
        Ok(Self { config, arms, home_height })
    }

    pub fn config(&self) -> &RsrGeometryConfig {
        &self.config
    }

    pub fn arms(&self) -> &[Arm; 3] {
        &self.arms
    }

    pub fn d_min(&self) -> f64 {
        self.config.d_min
    }

    pub fn d_max(&self) -> f64 {
        self.config.d_max
    }

    pub fn cone_limit_deg(&self) -> f64 {
        self.config.cone_limit_deg
    }

    pub fn theta_limits_deg(&self) -> [f64; 2] {
        self.config.theta_limits_deg
    }

    pub fn home_height(&self) -> f64 {
        self.home_height
    }

    /// Moving ring centred above the fixed ring at the home height, identity orientation.
    pub fn home_pose(&self) -> Pose6 {
        Pose6::from_translation(Vector3::new(0.0, 0.0, self.home_height))
    }
}

/// Revolute angles (deg) and prismatic lengths (mm); also used for joint rates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointVector {
    pub theta: [f64; 3],
    pub d: [f64; 3],
}

impl JointVector {
    /// `[th1, th2, th3, d1, d2, d3]`
    pub fn to_array(&self) -> [f64; 6] {
        [self.theta[0], self.theta[1], self.theta[2], self.d[0], self.d[1], self.d[2]]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self { theta: [v[0], v[1], v[2]], d: [v[3], v[4], v[5]] }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::from(self.to_array())
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::from_array([v[0], v[1], v[2], v[3], v[4], v[5]])
    }
}

/// Per-arm details of an inverse-kinematics evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegSolution {
    /// Spherical-joint centre, world frame.
    pub sphere_centre: Vector3<f64>,
    /// Leg vector from base anchor to spherical joint.
    pub leg: Vector3<f64>,
    /// Component of the leg along the revolute axis, taken up by the universal joint.
    pub out_of_plane: f64,
    pub cone_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkSolution {
    pub joints: JointVector,
    pub legs: [LegSolution; 3],
    /// All prismatic joints within stroke and all cones within the limit.
    pub admissible: bool,
}

fn cone_deg(leg: &Vector3<f64>, axis_world: &Vector3<f64>) -> f64 {
    leg.cross(axis_world).norm().atan2(leg.dot(axis_world)).to_degrees()
}

pub fn rsr_ik(x: &Pose6, g: &RsrGeometry) -> Result<IkSolution, RsrError> {
    let mut joints = JointVector::default();
    let mut legs = [LegSolution {
        sphere_centre: Vector3::zeros(),
        leg: Vector3::zeros(),
        out_of_plane: 0.0,
        cone_deg: 0.0,
    }; 3];
    let mut admissible = true;
    for (i, arm) in g.arms.iter().enumerate() {
        let s = x.p + x.q * arm.platform;
        let l = s - arm.base;
        let d = l.norm();
        if !(d >= DEGENERATE_LEG_MM) {
            return Err(RsrError::DegenerateLeg { arm: i });
        }
        let theta = l.dot(&arm.n).atan2(l.dot(&arm.m)).to_degrees();
        let cone = cone_deg(&l, &(x.q * arm.sphere_axis));
        admissible &= d >= g.d_min() && d <= g.d_max() && cone <= g.cone_limit_deg();
        joints.theta[i] = theta;
        joints.d[i] = d;
        legs[i] = LegSolution { sphere_centre: s, leg: l, out_of_plane: l.dot(&arm.e), cone_deg: cone };
    }
    Ok(IkSolution { joints, legs, admissible })
}

/// Leg vector rebuilt from joint values and the universal joint's out-of-plane component.
pub fn reconstruct_leg(arm: &Arm, theta_deg: f64, d: f64, out_of_plane: f64) -> Vector3<f64> {
    let in_plane = (d * d - out_of_plane * out_of_plane).max(0.0).sqrt();
    let (s, c) = theta_deg.to_radians().sin_cos();
    arm.m * (in_plane * c) + arm.n * (in_plane * s) + arm.e * out_of_plane
}

/// Signed margins, per arm `[d - d_min, d_max - d, cone_limit - cone]`, in arm order.
pub type Margins = [f64; 9];

/// Workspace margins of a pose. A degenerate leg reports zero length and a 180 deg cone.
pub fn workspace_margin(x: &Pose6, g: &RsrGeometry) -> Margins {
    margins_of(&x.p, &x.q, g)
}

pub(crate) fn margins_of(p: &Vector3<f64>, q: &UnitQuaternion<f64>, g: &RsrGeometry) -> Margins {
    let mut out = [0.0; 9];
    for (i, arm) in g.arms.iter().enumerate() {
        let l = p + q * arm.platform - arm.base;
        let d = l.norm();
        let cone = if d < DEGENERATE_LEG_MM { 180.0 } else { cone_deg(&l, &(q * arm.sphere_axis)) };
        out[3 * i] = d - g.d_min();
        out[3 * i + 1] = g.d_max() - d;
        out[3 * i + 2] = g.cone_limit_deg() - cone;
    }
    out
}

pub fn is_admissible(x: &Pose6, g: &RsrGeometry) -> bool {
    workspace_margin(x, g).iter().all(|m| *m >= 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianMatrix {
    pub j: Matrix6<f64>,
    /// Ratio of largest to smallest singular value; infinite when rank deficient.
    pub condition: f64,
    pub singular: bool,
}

impl JacobianMatrix {
    /// Joint rates `[th_dot (deg/s), d_dot (mm/s)]` for a twist `[v (mm/s), w (deg/s)]`.
    pub fn joint_rates(&self, twist: &crate::geom::Twist) -> JointVector {
        JointVector::from_vector(&(self.j * Vector6::from(twist.to_array())))
    }
}

fn jacobian_rows(x: &Pose6, g: &RsrGeometry) -> Result<Matrix6<f64>, RsrError> {
    let mut j = Matrix6::zeros();
    let deg = 180.0 / std::f64::consts::PI;
    for (i, arm) in g.arms.iter().enumerate() {
        let rb = x.q * arm.platform;
        let l = x.p + rb - arm.base;
        let d = l.norm();
        if !(d >= DEGENERATE_LEG_MM) {
            return Err(RsrError::DegenerateLeg { arm: i });
        }
        let u = l / d;
        let ang = rb.cross(&u) / deg;
        j.fixed_view_mut::<1, 3>(3 + i, 0).copy_from(&u.transpose());
        j.fixed_view_mut::<1, 3>(3 + i, 3).copy_from(&ang.transpose());

        // theta = atan2(l.n, l.m); gradient with respect to l, rad/mm.
        let (mc, nc) = (l.dot(&arm.m), l.dot(&arm.n));
        let grad = (arm.n * mc - arm.m * nc) / (mc * mc + nc * nc);
        j.fixed_view_mut::<1, 3>(i, 0).copy_from(&(grad * deg).transpose());
        j.fixed_view_mut::<1, 3>(i, 3).copy_from(&rb.cross(&grad).transpose());
    }
    Ok(j)
}

fn condition_number(j: &Matrix6<f64>) -> f64 {
    let sv = j.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 { max / min } else { f64::INFINITY }
}

pub fn rsr_jacobian(x: &Pose6, g: &RsrGeometry) -> Result<JacobianMatrix, RsrError> {
    let j = jacobian_rows(x, g)?;
    let condition = condition_number(&j);
    let singular = !(condition <= SINGULAR_CONDITION);
    Ok(JacobianMatrix { j, condition, singular })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FkSolution {
    pub pose: Pose6,
    pub iterations: usize,
    pub residual: f64,
}

fn joint_residual(x: &Pose6, q: &JointVector, g: &RsrGeometry) -> Option<Vector6<f64>> {
    let sol = rsr_ik(x, g).ok()?;
    let mut r = Vector6::zeros();
    for i in 0..3 {
        r[i] = wrap_deg(sol.joints.theta[i] - q.theta[i]);
        r[3 + i] = sol.joints.d[i] - q.d[i];
    }
    Some(r)
}

/// Applies a pose increment `[dp (mm), world rotation vector (deg)]`.
pub fn apply_increment(x: &Pose6, dx: &Vector6<f64>) -> Pose6 {
    let dp = Vector3::new(dx[0], dx[1], dx[2]);
    let dr = Vector3::new(dx[3], dx[4], dx[5]);
    Pose6::new(x.p + dp, renormalize(&(exp_deg(&dr) * x.q)))
}

/// Damped Newton on the inverse-kinematics residual, warm-started at `guess`.
///
/// Iterates past [`FK_TOLERANCE`] while the residual keeps shrinking so that the
/// returned pose is accurate to round-off, not merely to the tolerance.
pub fn rsr_fk(q: &JointVector, guess: &Pose6, g: &RsrGeometry) -> Result<FkSolution, RsrError> {
    let fail = |iterations, residual| RsrError::NoConvergence { iterations, residual };
    let mut x = *guess;
    let mut r = joint_residual(&x, q, g).ok_or(fail(0, f64::INFINITY))?;
    let mut rn = r.norm();
    for it in 0..FK_MAX_ITERATIONS {
        if rn == 0.0 {
            return Ok(FkSolution { pose: x, iterations: it, residual: rn });
        }
        let j = jacobian_rows(&x, g).map_err(|_| fail(it, rn))?;
        let svd = j.svd(true, true);
        let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
        if !(smin > 0.0 && smax / smin <= SINGULAR_CONDITION) {
            return Err(fail(it, rn));
        }
        let step = svd.solve(&(-r), 0.0).map_err(|_| fail(it, rn))?;

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..8 {
            let trial = apply_increment(&x, &(step * alpha));
            if let Some(rt) = joint_residual(&trial, q, g) {
                if rt.norm() < rn {
                    accepted = Some((trial, rt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, rt)) => {
                let prev = rn;
                x = trial;
                r = rt;
                rn = r.norm();
                if rn < FK_TOLERANCE && rn > 0.25 * prev {
                    return Ok(FkSolution { pose: x, iterations: it + 1, residual: rn });
                }
            }
            None if rn < FK_TOLERANCE => {
                return Ok(FkSolution { pose: x, iterations: it, residual: rn });
            }
            None => return Err(fail(it + 1, rn)),
        }
    }
    if rn < FK_TOLERANCE {
        Ok(FkSolution { pose: x, iterations: FK_MAX_ITERATIONS, residual: rn })
    } else {
        Err(fail(FK_MAX_ITERATIONS, rn))
    }
}

/// Draws an admissible pose near home by rejection sampling, within
/// `span_mm` of home on each axis and `span_deg` on each Euler angle.
pub fn sample_admissible_pose<R: Rng + ?Sized>(rng: &mut R, g: &RsrGeometry, span_mm: f64, span_deg: f64) -> Pose6 {
    let home = g.home_pose();
    loop {
        let mut v = [0.0; 6];
        for (k, slot) in v.iter_mut().enumerate() {
            let span = if k < 3 { span_mm } else { span_deg };
            *slot = rng.random_range(-span..=span);
        }
        let x = Pose6::from_euler_deg(home.p + Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]));
        if is_admissible(&x, g) {
            return x;
        }
    }
}

/// Largest `s` in `[0, s_max]` such that every pose `x0 + s' * dir` for `s' <= s`
/// sampled at `step` and refined by bisection stays admissible. `dir` is
/// `[dp (mm), world rotation vector (deg)]` per unit of `s`.
pub fn ray_exit(x0: &Pose6, dir: &Vector6<f64>, s_max: f64, step: f64, g: &RsrGeometry) -> f64 {
    let inside = |s: f64| is_admissible(&apply_increment(x0, &(dir * s)), g);
    if !inside(0.0) {
        return 0.0;
    }
    let mut lo = 0.0;
    while lo < s_max {
        let hi = (lo + step).min(s_max);
        if !inside(hi) {
            let (mut a, mut b) = (lo, hi);
            for _ in 0..60 {
                let mid = 0.5 * (a + b);
                if inside(mid) {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            return a;
        }
        lo = hi;
    }
    s_max
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Twist;

    #[test]
    fn frames_are_orthonormal() {
        let g = RsrGeometry::default();
        for arm in g.arms() {
            for v in [arm.m, arm.n, arm.e] {
                assert!((v.norm() - 1.0).abs() < 1e-12);
            }
            assert!(arm.m.dot(&arm.n).abs() < 1e-12);
            assert!(arm.m.dot(&arm.e).abs() < 1e-12);
            assert!(arm.n.dot(&arm.e).abs() < 1e-12);
            // Revolute axis tangent to the fixed ring.
            assert!(arm.e.dot(&arm.base).abs() < 1e-9);
        }
    }

    #[test]
    fn home_is_mid_stroke_and_symmetric() {
        let g = RsrGeometry::default();
        let sol = rsr_ik(&g.home_pose(), &g).unwrap();
        for i in 0..3 {
            assert!((sol.joints.d[i] - 284.0).abs() < 1e-9);
            assert!((sol.joints.theta[i] - sol.joints.theta[0]).abs() < 1e-12);
        }
        assert!(sol.admissible);
        assert!(workspace_margin(&g.home_pose(), &g).iter().all(|m| *m > 0.0));
    }

    #[test]
    fn degenerate_leg() {
        let cfg = RsrGeometryConfig {
            fixed_radius: 120.0,
            platform_angles_deg: [90.0, 210.0, 330.0],
            ..Default::default()
        };
        let g = RsrGeometry::new(cfg).unwrap();
        let x = Pose6::identity();
        assert_eq!(rsr_ik(&x, &g).unwrap_err(), RsrError::DegenerateLeg { arm: 0 });
        let m = workspace_margin(&x, &g);
        assert_eq!(m[0], -g.d_min());
        assert_eq!(m[2], g.cone_limit_deg() - 180.0);
    }

    #[test]
    fn fk_from_exact_guess_takes_no_steps() {
        let g = RsrGeometry::default();
        let home = g.home_pose();
        let q = rsr_ik(&home, &g).unwrap().joints;
        let sol = rsr_fk(&q, &home, &g).unwrap();
        assert_eq!(sol.iterations, 0);
        assert!(sol.residual < FK_TOLERANCE);
        assert_eq!(sol.pose, home);
    }

    #[test]
    fn z_twist_at_home_gives_equal_positive_d_rates() {
        let g = RsrGeometry::default();
        let j = rsr_jacobian(&g.home_pose(), &g).unwrap();
        let rates = j.joint_rates(&Twist::new(Vector3::z(), Vector3::zeros()));
        assert!(rates.d[0] > 0.0);
        assert!((rates.d[1] - rates.d[0]).abs() < 1e-12 && (rates.d[2] - rates.d[0]).abs() < 1e-12);
        assert!(!j.singular);
    }

    #[test]
    fn invalid_geometry_rejected() {
        let cfg = RsrGeometryConfig { d_min: 400.0, ..Default::default() };
        assert!(matches!(RsrGeometry::new(cfg), Err(RsrError::InvalidGeometry(_))));
        let json = r#"{"fixed_radius": 180.0, "bogus": 1}"#;
        assert!(serde_json::from_str::<RsrGeometry>(json).is_err());
    }

    #[test]
    fn geometry_serde_roundtrip() {
        let g = RsrGeometry::default();
        let s = serde_json::to_string(&g).unwrap();
        let back: RsrGeometry = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
    }
}
