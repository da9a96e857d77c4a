//! Leader-side kinematics: the delta translation stage of the haptic controller
//! (three identical chains) and joint-limit bookkeeping for its serial wrist.
//!
//! Each chain `i` has its own frame `(u_i, v_i, w_i)` attached at its lowest
//! joint. A platform-centre position `P` maps into that frame by rotating about
//! y by the tilt angle, then about z by the chain angle, then shifting by
//! `(-r, -s, 0)`. In the chain frame the position satisfies
//!
//! ```text
//! Pu = a cos(th1) - c + b sin(th3) cos(th2)
//! Pv = b cos(th3) - f
//! Pw = a sin(th1)     + b sin(th3) sin(th2)
//! ```
//!
//! Of the four solutions per chain only the one with `th3 > 0` and
//! `th1` in the open first quadrant is physical.

use nalgebra::{Matrix2, Matrix3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Pose6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HcError {
    #[error("chain {chain}: target is out of reach")]
    Unreachable { chain: usize },
    #[error("chain {chain}: only solutions outside th3 > 0, 0 < th1 < 90 deg exist")]
    BranchViolation { chain: usize },
    #[error("wrist axis {axis}: angle {angle_deg} deg outside [{min}, {max}]")]
    WristLimit { axis: usize, angle_deg: f64, min: f64, max: f64 },
    #[error("invalid haptic controller geometry: {0}")]
    InvalidGeometry(String),
}

/// Dimensions of the delta stage (mm, deg) and wrist limits (deg).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HcGeometry {
    /// Upper-arm length.
    pub a: f64,
    /// Parallelogram (forearm) length.
    pub b: f64,
    /// Distance from the base centre to the lowest joint of each chain.
    pub r: f64,
    /// Distance from the highest chain joint to the platform centre.
    pub c: f64,
    /// Offset to the platform centre along the chain's v axis.
    pub f: f64,
    /// Second translation component of the chain-frame offset. Not given by the
    /// mechanism's published dimensions; defaults to `f`.
    pub s: f64,
    /// Tilt of the chain frames about y.
    pub tilt_deg: f64,
    /// Per-chain rotation about z.
    pub chain_angles_deg: [f64; 3],
    /// `[min, max]` per wrist axis, applied to the intrinsic X-Y-Z Euler angles.
    pub wrist_limits_deg: [[f64; 2]; 3],
}

impl Default for HcGeometry {
    fn default() -> Self {
        Self {
            a: 84.0,
            b: 175.0,
            r: 79.0,
            c: 42.0,
            f: 37.0,
            s: 37.0,
            tilt_deg: 45.0,
            chain_angles_deg: [-17.0, -137.0, 103.0],
            wrist_limits_deg: [[-90.0, 90.0], [-60.0, 60.0], [-170.0, 170.0]],
        }
    }
}

impl HcGeometry {
    pub fn validate(&self) -> Result<(), HcError> {
        for (name, v) in [("a", self.a), ("b", self.b), ("r", self.r), ("c", self.c), ("f", self.f)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(HcError::InvalidGeometry(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.s.is_finite() || !self.tilt_deg.is_finite() {
            return Err(HcError::InvalidGeometry("s and tilt_deg must be finite".into()));
        }
        for (axis, [lo, hi]) in self.wrist_limits_deg.iter().enumerate() {
            if !(lo < hi) {
                return Err(HcError::InvalidGeometry(format!("wrist axis {axis}: min >= max")));
            }
        }
        Ok(())
    }

    /// Upper bound on the chain-frame distance any configuration can reach.
    pub fn max_reach(&self) -> f64 {
        self.a + self.b + self.c + self.f
    }
}

/// Joint angles of one chain, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HcChainAngles {
    pub th1: f64,
    pub th2: f64,
    pub th3: f64,
}

/// Position of the platform centre in chain `chain`'s frame.
///
/// # Panics
/// If `chain > 2`.
pub fn to_chain_frame(p: &Vector3<f64>, chain: usize, g: &HcGeometry) -> Vector3<f64> {
    let (sp, cp) = g.chain_angles_deg[chain].to_radians().sin_cos();
    let (st, ct) = g.tilt_deg.to_radians().sin_cos();
    #[rustfmt::skip]
    let rz = Matrix3::new(
         cp, sp, 0.0,
        -sp, cp, 0.0,
        0.0, 0.0, 1.0,
    );
    #[rustfmt::skip]
    let ry = Matrix3::new(
         ct, 0.0, st,
        0.0, 1.0, 0.0,
        -st, 0.0, ct,
    );
    rz * (ry * p) + Vector3::new(-g.r, -g.s, 0.0)
}

/// Forward evaluation of the chain equations: chain-frame platform position for
/// the given joint angles.
pub fn chain_position(angles: &HcChainAngles, g: &HcGeometry) -> Vector3<f64> {
    let (s1, c1) = angles.th1.to_radians().sin_cos();
    let (s2, c2) = angles.th2.to_radians().sin_cos();
    let (s3, c3) = angles.th3.to_radians().sin_cos();
    let rho = g.b * s3;
    Vector3::new(g.a * c1 - g.c + rho * c2, g.b * c3 - g.f, g.a * s1 + rho * s2)
}

fn in_first_quadrant(deg: f64) -> bool {
    deg > 0.0 && deg < 90.0
}

/// Solves one chain for the physical branch.
pub fn solve_chain_ik(p: &Vector3<f64>, chain: usize, g: &HcGeometry) -> Result<HcChainAngles, HcError> {
    let pc = to_chain_frame(p, chain, g);
    if pc.norm() > g.max_reach() {
        return Err(HcError::Unreachable { chain });
    }

    let cos3 = (pc.y + g.f) / g.b;
    if !(-1.0..=1.0).contains(&cos3) {
        return Err(HcError::Unreachable { chain });
    }
    let th3 = cos3.acos();
    if th3 <= 0.0 {
        return Err(HcError::BranchViolation { chain });
    }
    let rho = g.b * th3.sin();

    // Planar two-link problem in (u + c, w): a at th1, then rho at th2.
    let x = pc.x + g.c;
    let y = pc.z;
    let k = (x * x + y * y + g.a * g.a - rho * rho) / (2.0 * g.a);
    let disc = x * x + y * y - k * k;
    if disc < 0.0 {
        return Err(HcError::Unreachable { chain });
    }

    // x cos th1 + y sin th1 = k with t = tan(th1 / 2):
    // (k + x) t^2 - 2 y t + (k - x) = 0, solved in the cancellation-free form.
    let root = disc.sqrt();
    let q = y + if y >= 0.0 { root } else { -root };
    let candidates: Vec<f64> = if q != 0.0 && q.is_finite() {
        [q / (k + x), (k - x) / q]
            .into_iter()
            .filter(|t| t.is_finite())
            .map(|t| 2.0 * t.atan())
            .collect()
    } else {
        newton_planar(x, y, g.a, rho, 45f64.to_radians()).into_iter().collect()
    };

    // Both roots in the first quadrant does not occur for the stock geometry; if
    // a custom geometry produces it, the smaller root is taken.
    let th1 = candidates
        .into_iter()
        .filter(|t| in_first_quadrant(t.to_degrees()))
        .min_by(|a, b| a.total_cmp(b))
        .ok_or(HcError::BranchViolation { chain })?;

    let th2 = (y - g.a * th1.sin()).atan2(x - g.a * th1.cos());
    Ok(HcChainAngles { th1: th1.to_degrees(), th2: th2.to_degrees(), th3: th3.to_degrees() })
}

/// 2-D Newton on `a (cos t1, sin t1) + rho (cos t2, sin t2) = (x, y)` from `th1_guess`.
/// Used when the closed form is degenerate; returns the converged `th1` in radians.
pub(crate) fn newton_planar(x: f64, y: f64, a: f64, rho: f64, th1_guess: f64) -> Option<f64> {
    let mut t = Vector2::new(th1_guess, (y - a * th1_guess.sin()).atan2(x - a * th1_guess.cos()));
    for _ in 0..50 {
        let (s1, c1) = t.x.sin_cos();
        let (s2, c2) = t.y.sin_cos();
        let r = Vector2::new(a * c1 + rho * c2 - x, a * s1 + rho * s2 - y);
        if r.norm() < 1e-12 {
            return Some(t.x);
        }
        let j = Matrix2::new(-a * s1, -rho * s2, a * c1, rho * c2);
        let step = j.lu().solve(&r)?;
        t -= step;
    }
    None
}

/// Solves all three chains; the error names the first chain that fails.
pub fn solve_hc_ik(p: &Vector3<f64>, g: &HcGeometry) -> Result<[HcChainAngles; 3], HcError> {
    Ok([solve_chain_ik(p, 0, g)?, solve_chain_ik(p, 1, g)?, solve_chain_ik(p, 2, g)?])
}

/// Wrist joint angles for a commanded orientation. The wrist's three axes are
/// independent, so the angles are the intrinsic X-Y-Z Euler angles, checked
/// against the configured limits.
pub fn wrist_angles(q: &UnitQuaternion<f64>, g: &HcGeometry) -> Result<[f64; 3], HcError> {
    let e = Pose6::new(Vector3::zeros(), *q).euler_deg();
    let angles = [e.x, e.y, e.z];
    for (axis, (&angle, [lo, hi])) in angles.iter().zip(g.wrist_limits_deg.iter()).enumerate() {
        if angle < *lo || angle > *hi {
            return Err(HcError::WristLimit { axis, angle_deg: angle, min: *lo, max: *hi });
        }
    }
    Ok(angles)
}
