use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{exp_deg, log_deg, Pose6};

/// Noise parameters of the constant-acceleration model. Units follow the axis
/// (mm or deg).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanConfig {
    /// Process noise intensity on the acceleration increment, (unit/s^2)^2.
    pub q_a: f64,
    /// Measurement noise variance, unit^2.
    pub r_m: f64,
    /// Initial variances of (position, velocity, acceleration).
    pub p0: [f64; 3],
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self { q_a: 1e2, r_m: 1e-2, p0: [1e-2, 1e2, 1e4] }
    }
}

/// Filter state for one axis: `x = (pos, vel, acc)` and its covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanAxisState {
    pub x: Vector3<f64>,
    pub p: Matrix3<f64>,
    pub dt: f64,
    pub q_a: f64,
    pub r_m: f64,
}

pub fn transition_matrix(dt: f64) -> Matrix3<f64> {
    Matrix3::new(1.0, dt, 0.5 * dt * dt, 0.0, 1.0, dt, 0.0, 0.0, 1.0)
}

fn process_noise(dt: f64, q_a: f64) -> Matrix3<f64> {
    let g = Vector3::new(0.5 * dt * dt, dt, 1.0);
    g * g.transpose() * q_a
}

impl KalmanAxisState {
    /// Starts at rest at the first measurement.
    pub fn new(z0: f64, dt: f64, cfg: &KalmanConfig) -> Self {
        Self {
            x: Vector3::new(z0, 0.0, 0.0),
            p: Matrix3::from_diagonal(&Vector3::from(cfg.p0)),
            dt,
            q_a: cfg.q_a,
            r_m: cfg.r_m,
        }
    }

    pub fn pos(&self) -> f64 {
        self.x[0]
    }

    pub fn vel(&self) -> f64 {
        self.x[1]
    }

    pub fn acc(&self) -> f64 {
        self.x[2]
    }
}

/// State propagated one step without a measurement.
pub fn kalman_predict(s: &KalmanAxisState) -> Vector3<f64> {
    transition_matrix(s.dt) * s.x
}

/// One predict-update cycle with measurement `z` of the position.
pub fn kalman_step(s: &KalmanAxisState, z: f64) -> KalmanAxisState {
    let f = transition_matrix(s.dt);
    let x_pred = f * s.x;
    let p_pred = f * s.p * f.transpose() + process_noise(s.dt, s.q_a);
    let innovation_var = p_pred[(0, 0)] + s.r_m;
    let k = p_pred.column(0) / innovation_var;
    let x = x_pred + k * (z - x_pred[0]);
    let p = p_pred - k * p_pred.row(0);
    let p = (p + p.transpose()) * 0.5;
    KalmanAxisState { x, p, ..*s }
}

/// Six independent axis filters over a pose. Orientation is filtered as the
/// rotation vector (deg) relative to the first measured orientation.
#[derive(Debug, Clone)]
pub struct PoseKalman {
    axes: [KalmanAxisState; 6],
    reference: UnitQuaternion<f64>,
}

impl PoseKalman {
    pub fn new(initial: &Pose6, dt: f64, cfg: &KalmanConfig) -> Self {
        let reference = initial.q;
        let axes = std::array::from_fn(|i| {
            let z0 = if i < 3 { initial.p[i] } else { 0.0 };
            KalmanAxisState::new(z0, dt, cfg)
        });
        Self { axes, reference }
    }

    pub fn axes(&self) -> &[KalmanAxisState; 6] {
        &self.axes
    }

    pub fn step(&mut self, z: &Pose6) -> Pose6 {
        let rv = log_deg(&(z.q * self.reference.inverse()));
        for i in 0..6 {
            let zi = if i < 3 { z.p[i] } else { rv[i - 3] };
            self.axes[i] = kalman_step(&self.axes[i], zi);
        }
        self.estimate()
    }

    pub fn estimate(&self) -> Pose6 {
        let p = Vector3::new(self.axes[0].pos(), self.axes[1].pos(), self.axes[2].pos());
        let rv = Vector3::new(self.axes[3].pos(), self.axes[4].pos(), self.axes[5].pos());
        Pose6::new(p, exp_deg(&rv) * self.reference)
    }
}
