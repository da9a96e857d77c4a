use serde::{Deserialize, Serialize};

use super::MotionError;
use crate::geom::Pose6;

/// Time-controlled point-to-point profile for one degree of freedom.
///
/// Holds `x0` before `t0`, `x0 + dx` after `t0 + dt`, and in between follows
/// `(dx / 2) sin((180 / dt)(t - t0) - 90 deg) + x0 + dx / 2`.
pub fn gui_trajectory(x0: f64, dx: f64, t0: f64, dt: f64, t: f64) -> Result<f64, MotionError> {
    if !(dt > 0.0) {
        return Err(MotionError::InvalidDuration(dt));
    }
    Ok(if t < t0 {
        x0
    } else if t > t0 + dt {
        x0 + dx
    } else {
        let arg_deg = (180.0 / dt) * (t - t0) - 90.0;
        (dx / 2.0) * arg_deg.to_radians().sin() + x0 + dx / 2.0
    })
}

/// One of the six pose coordinates: translation (mm) or intrinsic X-Y-Z Euler angle (deg).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dof {
    X,
    Y,
    Z,
    Alpha,
    Beta,
    Gamma,
}

impl Dof {
    pub const ALL: [Dof; 6] = [Dof::X, Dof::Y, Dof::Z, Dof::Alpha, Dof::Beta, Dof::Gamma];

    /// Index into `[x, y, z, alpha, beta, gamma]`.
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Applies [`gui_trajectory`] to one coordinate of `start`, leaving the others untouched.
pub fn gui_trajectory_pose(start: &Pose6, dof: Dof, dx: f64, t0: f64, dt: f64, t: f64) -> Result<Pose6, MotionError> {
    let mut v = start.to_array6();
    let i = dof.index();
    v[i] = gui_trajectory(v[i], dx, t0, dt, t)?;
    if i < 3 {
        let mut p = *start;
        p.p[i] = v[i];
        Ok(p)
    } else {
        Ok(Pose6::from_array6(v))
    }
}
