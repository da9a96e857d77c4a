//! Joint-limit haptic rendering.
//!
//! The mapped follower pose is surrounded by two spherical point clouds: a
//! translation cloud of positions at radius `rho_t` and a rotation cloud of
//! orientations rotated by `rho_r` about each sphere direction. Every probe is
//! scored with the workspace margins. Probes with a negative margin contribute
//! their penetration depth along the inward normal of their most-violated
//! constraint; the mean over the cloud, times a stiffness, gives the boundary
//! force (translation cloud) and torque (rotation cloud). Without any
//! violation the wrench is a viscous drag on the leader velocity. The result is
//! capped and passed through a linearly weighted moving average.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::{UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{clip_norm, exp_deg, Pose6, Twist, Wrench};
use crate::rsr::{margins_of, Margins, RsrGeometry};

/// Tick duration above which a frame is flagged over budget, microseconds.
pub const BUDGET_US: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HapticConfig {
    /// Points per cloud.
    pub points: usize,
    /// Translation cloud radius, mm.
    pub rho_t_mm: f64,
    /// Rotation cloud radius, deg.
    pub rho_r_deg: f64,
    /// Force cap, N.
    pub f_max: f64,
    /// Torque cap, N m.
    pub tau_max: f64,
    /// Boundary stiffness, N/mm. The default reaches the cap at 5 mm depth.
    pub k_f: f64,
    /// Boundary stiffness, N m/deg. The default reaches the cap at 5 deg depth.
    pub k_tau: f64,
    /// Viscous drag, N s/mm.
    pub b_v: f64,
    /// Viscous drag, N m s/deg.
    pub b_w: f64,
    /// Moving-average length, frames.
    pub window: usize,
    /// Central-difference step for constraint gradients, mm and deg.
    pub gradient_step: f64,
    /// Evaluate probes on the rayon pool.
    pub parallel: bool,
}

impl Default for HapticConfig {
    fn default() -> Self {
        Self {
            points: 500,
            rho_t_mm: 2.0,
            rho_r_deg: 2.0,
            f_max: 15.0,
            tau_max: 0.3,
            k_f: 3.0,
            k_tau: 0.06,
            b_v: 0.05,
            b_w: 0.005,
            window: 5,
            gradient_step: 1e-3,
            parallel: true,
        }
    }
}

impl HapticConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.points < 16 {
            return Err(format!("haptic clouds need at least 16 points, got {}", self.points));
        }
        if self.window == 0 {
            return Err("haptic filter window must be at least 1".into());
        }
        let positive = [self.rho_t_mm, self.rho_r_deg, self.f_max, self.tau_max, self.k_f, self.k_tau, self.gradient_step];
        if positive.iter().any(|v| !(*v > 0.0)) || self.b_v < 0.0 || self.b_w < 0.0 {
            return Err(format!("haptic parameters out of range: {self:?}"));
        }
        Ok(())
    }

    /// Filter weights, oldest first, proportional to 1..=window and summing to 1.
    pub fn weights(&self) -> Vec<f64> {
        let total = (self.window * (self.window + 1)) as f64 / 2.0;
        (1..=self.window).map(|k| k as f64 / total).collect()
    }
}

/// Deterministic, near-uniform unit directions (golden-angle spiral).
pub fn fibonacci_sphere(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let (s, c) = (golden * i as f64).sin_cos();
            Vector3::new(r * c, r * s, z)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyClouds {
    pub center: Pose6,
    /// Probe positions, world frame, at `rho_t` from the centre.
    pub translation: Vec<Vector3<f64>>,
    /// Probe orientations, the centre orientation rotated by `rho_r` about each direction.
    pub rotation: Vec<UnitQuaternion<f64>>,
}

fn clouds_from_directions(pose: &Pose6, dirs: &[Vector3<f64>], cfg: &HapticConfig) -> ProxyClouds {
    ProxyClouds {
        center: *pose,
        translation: dirs.iter().map(|u| pose.p + u * cfg.rho_t_mm).collect(),
        rotation: dirs.iter().map(|u| exp_deg(&(u * cfg.rho_r_deg)) * pose.q).collect(),
    }
}

pub fn build_clouds(pose: &Pose6, cfg: &HapticConfig) -> ProxyClouds {
    clouds_from_directions(pose, &fibonacci_sphere(cfg.points), cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloudMargins {
    pub translation: Vec<Margins>,
    pub rotation: Vec<Margins>,
}

impl CloudMargins {
    pub fn outside_translation(&self) -> usize {
        self.translation.iter().filter(|m| is_outside(m)).count()
    }

    pub fn outside_rotation(&self) -> usize {
        self.rotation.iter().filter(|m| is_outside(m)).count()
    }
}

pub fn is_outside(m: &Margins) -> bool {
    m.iter().any(|v| *v < 0.0)
}

/// Workspace margins of every probe. The parallel path returns exactly the
/// sequential result.
pub fn evaluate_violation(clouds: &ProxyClouds, g: &RsrGeometry, parallel: bool) -> CloudMargins {
    let c = clouds.center;
    if parallel {
        CloudMargins {
            translation: clouds.translation.par_iter().map(|p| margins_of(p, &c.q, g)).collect(),
            rotation: clouds.rotation.par_iter().map(|q| margins_of(&c.p, q, g)).collect(),
        }
    } else {
        CloudMargins {
            translation: clouds.translation.iter().map(|p| margins_of(p, &c.q, g)).collect(),
            rotation: clouds.rotation.iter().map(|q| margins_of(&c.p, q, g)).collect(),
        }
    }
}

/// Gradients of all nine margins at a pose, with respect to translation (per
/// mm) and world rotation (per deg), by central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintGradients {
    pub translation: [Vector3<f64>; 9],
    pub rotation: [Vector3<f64>; 9],
}

pub fn constraint_gradients(pose: &Pose6, g: &RsrGeometry, h: f64) -> ConstraintGradients {
    let mut out = ConstraintGradients { translation: [Vector3::zeros(); 9], rotation: [Vector3::zeros(); 9] };
    for axis in 0..3 {
        let mut e = Vector3::zeros();
        e[axis] = h;
        let tp = margins_of(&(pose.p + e), &pose.q, g);
        let tm = margins_of(&(pose.p - e), &pose.q, g);
        let rp = margins_of(&pose.p, &(exp_deg(&e) * pose.q), g);
        let rm = margins_of(&pose.p, &(exp_deg(&-e) * pose.q), g);
        for c in 0..9 {
            out.translation[c][axis] = (tp[c] - tm[c]) / (2.0 * h);
            out.rotation[c][axis] = (rp[c] - rm[c]) / (2.0 * h);
        }
    }
    out
}

fn most_violated(m: &Margins) -> usize {
    let mut best = 0;
    for c in 1..9 {
        if m[c] < m[best] {
            best = c;
        }
    }
    best
}

/// Sum of depth-weighted inward normals over the outside probes, and the
/// deepest penetration per constraint.
fn penetration(margins: &[Margins], grads: &[Vector3<f64>; 9], depths: &mut [f64; 9]) -> Vector3<f64> {
    let mut sum = Vector3::zeros();
    for m in margins {
        let c = most_violated(m);
        if m[c] >= 0.0 {
            continue;
        }
        let norm = grads[c].norm();
        if norm == 0.0 {
            continue;
        }
        let depth = -m[c] / norm;
        depths[c] = depths[c].max(depth);
        sum += grads[c] * (depth / norm);
    }
    sum
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HapticFrame {
    /// Filtered, capped wrench presented to the user.
    pub wrench: Wrench,
    /// Capped wrench before filtering.
    pub raw: Wrench,
    pub violating: bool,
    /// Deepest penetration per constraint, mm for translation-cloud hits and
    /// deg for rotation-cloud hits (the larger of the two if both).
    pub depths: [f64; 9],
    pub outside_translation: usize,
    pub outside_rotation: usize,
    pub compute_us: f64,
    pub budget_exceeded: bool,
}

/// Boundary-or-viscous wrench for one set of probe margins, capped but not filtered.
pub fn render_wrench(
    margins: &CloudMargins,
    grads: &ConstraintGradients,
    velocity: &Twist,
    cfg: &HapticConfig,
) -> (Wrench, bool, [f64; 9]) {
    let mut depths = [0.0; 9];
    let mut depths_r = [0.0; 9];
    let f_sum = penetration(&margins.translation, &grads.translation, &mut depths);
    let t_sum = penetration(&margins.rotation, &grads.rotation, &mut depths_r);
    for c in 0..9 {
        depths[c] = depths[c].max(depths_r[c]);
    }
    let violating = margins.translation.iter().chain(margins.rotation.iter()).any(is_outside);
    let raw = if violating {
        let n_t = margins.translation.len().max(1) as f64;
        let n_r = margins.rotation.len().max(1) as f64;
        Wrench::new(f_sum * (cfg.k_f / n_t), t_sum * (cfg.k_tau / n_r))
    } else {
        Wrench::new(-velocity.v * cfg.b_v, -velocity.w * cfg.b_w)
    };
    (raw.saturated(cfg.f_max, cfg.tau_max), violating, depths)
}

/// Linearly weighted moving average over the last `window` wrenches, newest
/// weighted most. Starts from zero history.
#[derive(Debug, Clone)]
pub struct WrenchFilter {
    weights: Vec<f64>,
    history: VecDeque<Wrench>,
}

impl WrenchFilter {
    pub fn new(cfg: &HapticConfig) -> Self {
        let weights = cfg.weights();
        let history = std::iter::repeat_n(Wrench::zero(), weights.len()).collect();
        Self { weights, history }
    }

    pub fn push(&mut self, w: Wrench) -> Wrench {
        self.history.pop_front();
        self.history.push_back(w);
        let mut out = Wrench::zero();
        for (k, h) in self.history.iter().enumerate() {
            out.force += h.force * self.weights[k];
            out.torque += h.torque * self.weights[k];
        }
        out
    }
}

/// Stateful renderer: clouds, evaluation, wrench synthesis and filtering.
#[derive(Debug, Clone)]
pub struct HapticRenderer {
    cfg: HapticConfig,
    geometry: RsrGeometry,
    directions: Vec<Vector3<f64>>,
    filter: WrenchFilter,
}

impl HapticRenderer {
    pub fn new(cfg: HapticConfig, geometry: RsrGeometry) -> Self {
        Self { directions: fibonacci_sphere(cfg.points), filter: WrenchFilter::new(&cfg), cfg, geometry }
    }

    pub fn config(&self) -> &HapticConfig {
        &self.cfg
    }

    /// One haptic update for the mapped follower pose and the leader velocity.
    pub fn tick(&mut self, pose: &Pose6, velocity: &Twist) -> HapticFrame {
        let start = Instant::now();
        let clouds = clouds_from_directions(pose, &self.directions, &self.cfg);
        let margins = evaluate_violation(&clouds, &self.geometry, self.cfg.parallel);
        let grads = constraint_gradients(pose, &self.geometry, self.cfg.gradient_step);
        let (raw, violating, depths) = render_wrench(&margins, &grads, velocity, &self.cfg);
        let filtered = self.filter.push(raw);
        let wrench = Wrench::new(clip_norm(&filtered.force, self.cfg.f_max), clip_norm(&filtered.torque, self.cfg.tau_max));
        let compute_us = start.elapsed().as_secs_f64() * 1e6;
        HapticFrame {
            wrench,
            raw,
            violating,
            depths,
            outside_translation: margins.outside_translation(),
            outside_rotation: margins.outside_rotation(),
            compute_us,
            budget_exceeded: compute_us > BUDGET_US,
        }
    }
}

/// Single haptic update with a fresh renderer (zero filter history).
pub fn haptic_tick(pose: &Pose6, velocity: &Twist, cfg: &HapticConfig, g: &RsrGeometry) -> HapticFrame {
    HapticRenderer::new(*cfg, g.clone()).tick(pose, velocity)
}
