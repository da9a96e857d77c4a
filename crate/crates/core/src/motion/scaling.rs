use serde::{Deserialize, Serialize};

use super::MotionError;
use crate::geom::{renormalize, scale_rotation, Pose6, Twist};

/// Speed limits enforced on the follower trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleConfig {
    /// mm/s
    pub max_v: f64,
    /// deg/s
    pub max_w: f64,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self { max_v: 2.0, max_w: 0.2 }
    }
}

impl ScaleConfig {
    /// Faster limits used for demonstrations and the bundled sinusoid run.
    pub fn demo() -> Self {
        Self { max_v: 10.0, max_w: 1.0 }
    }

    pub fn validate(&self) -> Result<(), MotionError> {
        if self.max_v > 0.0 && self.max_w > 0.0 && self.max_v.is_finite() && self.max_w.is_finite() {
            Ok(())
        } else {
            Err(MotionError::InvalidConfig(format!("scale limits must be positive, got {self:?}")))
        }
    }
}

fn scale_factor(speed: f64, max: f64) -> f64 {
    if speed > max {
        max / speed
    } else {
        1.0
    }
}

/// Per-tick attenuation `(s_v, s_w)`: `min(1, max / speed)`, and 1 at rest.
pub fn dynamic_scale(twist: &Twist, cfg: &ScaleConfig) -> (f64, f64) {
    (scale_factor(twist.linear_speed(), cfg.max_v), scale_factor(twist.angular_speed(), cfg.max_w))
}

/// Advances the follower pose by the leader's increment from `hc_prev` to
/// `hc_now`, translation scaled by `s_v` and the relative rotation by `s_w`.
/// Both increments are applied in the world frame.
pub fn incremental_map(prev_rsr: &Pose6, hc_now: &Pose6, hc_prev: &Pose6, scale: (f64, f64)) -> Pose6 {
    let (s_v, s_w) = scale;
    let dp = (hc_now.p - hc_prev.p) * s_v;
    let rel = hc_now.q * hc_prev.q.inverse();
    let dq = scale_rotation(&rel, s_w);
    Pose6::new(prev_rsr.p + dp, renormalize(&(dq * prev_rsr.q)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn scale_examples() {
        let cfg = ScaleConfig::demo();
        let t = |v: f64| Twist::new(Vector3::new(v, 0.0, 0.0), Vector3::zeros());
        assert_eq!(dynamic_scale(&t(20.0), &cfg).0, 0.5);
        assert_eq!(dynamic_scale(&t(0.0), &cfg), (1.0, 1.0));
        assert_eq!(dynamic_scale(&t(5.0), &cfg).0, 1.0);
        let w = Twist::new(Vector3::zeros(), Vector3::new(0.0, 4.0, 0.0));
        assert_eq!(dynamic_scale(&w, &cfg), (1.0, 0.25));
    }

    #[test]
    fn zero_increment_keeps_pose() {
        let prev = Pose6::from_array6([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let hc = Pose6::from_array6([-7.0, 8.0, 9.0, 10.0, -11.0, 12.0]);
        assert_eq!(incremental_map(&prev, &hc, &hc, (0.3, 0.7)), prev);
    }

    #[test]
    fn scaled_translation() {
        let prev = Pose6::from_translation(Vector3::new(0.0, 0.0, 280.0));
        let a = Pose6::identity();
        let b = a.translated(&Vector3::new(2.0, 0.0, 0.0));
        let out = incremental_map(&prev, &b, &a, (0.5, 1.0));
        assert_eq!(out.p, Vector3::new(1.0, 0.0, 280.0));
    }

    #[test]
    fn scaled_rotation_about_fixed_axis() {
        let prev = Pose6::identity();
        let a = Pose6::identity();
        let b = a.rotated(&Vector3::new(0.0, 0.0, 10.0));
        let out = incremental_map(&prev, &b, &a, (1.0, 0.5));
        assert!((out.euler_deg().z - 5.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_config() {
        assert!(ScaleConfig { max_v: 0.0, max_w: 1.0 }.validate().is_err());
        assert!(ScaleConfig::default().validate().is_ok());
    }
}
