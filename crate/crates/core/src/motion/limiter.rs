use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{MotionError, ScaleConfig};
use crate::geom::{clip_norm, exp_deg, log_deg, renormalize, Pose6};

/// Acceleration limits of the follower command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimiterConfig {
    /// mm/s^2
    pub a_max: f64,
    /// deg/s^2
    pub alpha_max: f64,
}

impl Default for LimiterConfig {
    fn default() -> Self {
        Self { a_max: 200.0, alpha_max: 20.0 }
    }
}

impl LimiterConfig {
    pub fn validate(&self) -> Result<(), MotionError> {
        if self.a_max > 0.0 && self.alpha_max > 0.0 {
            Ok(())
        } else {
            Err(MotionError::InvalidConfig(format!("acceleration limits must be positive, got {self:?}")))
        }
    }
}

/// Internal shrink applied to every limit so that finite-difference checks of
/// the output hold despite rounding.
const MARGIN: f64 = 1.0 - 1e-6;

/// Tracks a target pose under speed and acceleration limits.
///
/// The commanded velocity is the target's own velocity plus a correction that
/// closes any accumulated error along a braking-distance profile; the result is
/// clipped to the speed ball and its change to the acceleration ball. Since
/// both are norm projections, the finite-difference velocity and acceleration
/// of the output never exceed the limits.
#[derive(Debug, Clone)]
pub struct MotionLimiter {
    dt: f64,
    cfg: LimiterConfig,
    scale: ScaleConfig,
    pose: Pose6,
    v: Vector3<f64>,
    w: Vector3<f64>,
    prev_target: Pose6,
}

impl MotionLimiter {
    pub fn new(initial: Pose6, dt: f64, cfg: LimiterConfig, scale: ScaleConfig) -> Self {
        Self { dt, cfg, scale, pose: initial, v: Vector3::zeros(), w: Vector3::zeros(), prev_target: initial }
    }

    pub fn set_scale(&mut self, scale: ScaleConfig) {
        self.scale = scale;
    }

    pub fn pose(&self) -> Pose6 {
        self.pose
    }

    /// Velocity (mm/s) and world angular velocity (deg/s) of the last step.
    pub fn velocity(&self) -> (Vector3<f64>, Vector3<f64>) {
        (self.v, self.w)
    }

    fn command(
        feedforward: Vector3<f64>,
        error: Vector3<f64>,
        prev: Vector3<f64>,
        max_speed: f64,
        max_acc: f64,
        dt: f64,
    ) -> Vector3<f64> {
        let e = error.norm();
        let correction = if e > 0.0 {
            // Braking-distance speed for half the acceleration limit.
            let brake = (max_acc * e).sqrt();
            error * ((e / dt).min(brake) / e)
        } else {
            Vector3::zeros()
        };
        let desired = clip_norm(&(feedforward + correction), max_speed * MARGIN);
        let dv = clip_norm(&(desired - prev), max_acc * dt * MARGIN);
        // The acceleration step can leave the speed ball only if `prev` was
        // outside it, which the previous step rules out.
        clip_norm(&(prev + dv), max_speed * MARGIN)
    }

    pub fn step(&mut self, target: &Pose6) -> Pose6 {
        let dt = self.dt;
        let ff_v = (target.p - self.prev_target.p) / dt;
        let ff_w = log_deg(&(target.q * self.prev_target.q.inverse())) / dt;
        // Lag behind the previous target; the feedforward term covers the rest.
        let err_p = self.prev_target.p - self.pose.p;
        let err_r = log_deg(&(self.prev_target.q * self.pose.q.inverse()));

        self.v = Self::command(ff_v, err_p, self.v, self.scale.max_v, self.cfg.a_max, dt);
        self.w = Self::command(ff_w, err_r, self.w, self.scale.max_w, self.cfg.alpha_max, dt);

        let q: UnitQuaternion<f64> = renormalize(&(exp_deg(&(self.w * dt)) * self.pose.q));
        self.pose = Pose6::new(self.pose.p + self.v * dt, q);
        self.prev_target = *target;
        self.pose
    }
}
