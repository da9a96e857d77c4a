use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use super::{dynamic_scale, incremental_map, MotionError, MovingAverage, ScaleConfig, TrajectoryPacket};
use crate::geom::{clip_norm, log_deg, Pose6, TimedSample, Twist};
use crate::rsr::{apply_increment, is_admissible, RsrGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeaderConfig {
    /// Moving-average window on the leader pose, samples.
    pub smoothing_window: usize,
    /// Keep the commanded follower pose inside the joint-limit workspace.
    pub workspace_guard: bool,
}

impl Default for LeaderConfig {
    fn default() -> Self {
        Self { smoothing_window: 10, workspace_guard: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderOutput {
    pub packet: TrajectoryPacket,
    /// Follower pose the leader motion maps to before the workspace guard.
    /// The haptic renderer probes around this pose.
    pub virtual_pose: Pose6,
    /// Smoothed leader pose.
    pub smoothed: Pose6,
    /// Velocity of the smoothed leader pose.
    pub hc_twist: Twist,
    /// The guard shortened this tick's motion.
    pub guard_engaged: bool,
}

/// Leader loop body: smoothing, dynamic scaling, incremental mapping, workspace
/// guard and packet emission.
#[derive(Debug, Clone)]
pub struct LeaderStage {
    cfg: LeaderConfig,
    scale: ScaleConfig,
    geometry: RsrGeometry,
    ma: MovingAverage,
    prev: Option<(f64, Pose6)>,
    virtual_pose: Pose6,
    commanded: Pose6,
    next_seq: u64,
}

impl LeaderStage {
    pub fn new(initial_follower: Pose6, cfg: LeaderConfig, scale: ScaleConfig, geometry: RsrGeometry) -> Self {
        Self {
            ma: MovingAverage::new(cfg.smoothing_window),
            cfg,
            scale,
            geometry,
            prev: None,
            virtual_pose: initial_follower,
            commanded: initial_follower,
            next_seq: 0,
        }
    }

    pub fn scale(&self) -> ScaleConfig {
        self.scale
    }

    pub fn set_scale(&mut self, scale: ScaleConfig) {
        self.scale = scale;
    }

    pub fn commanded(&self) -> Pose6 {
        self.commanded
    }

    /// Follower pose the leader motion maps to before the workspace guard.
    pub fn virtual_pose(&self) -> Pose6 {
        self.virtual_pose
    }

    /// Group delay of the smoothing stage, in leader samples.
    pub fn smoothing_delay_samples(&self) -> f64 {
        self.ma.group_delay_samples()
    }

    /// Restarts smoothing and velocity estimation from the next sample, keeping
    /// the follower pose. Used when the leader stream is re-anchored.
    pub fn reset_input(&mut self) {
        self.ma.clear();
        self.prev = None;
        self.virtual_pose = self.commanded;
    }

    /// Restarts the input as [`reset_input`](Self::reset_input) does, but
    /// takes `pose` at time `t` as the reference, so motion of the next sample
    /// relative to it is applied.
    pub fn anchor_input(&mut self, t: f64, pose: Pose6) {
        self.reset_input();
        let smoothed = self.ma.push(pose);
        self.prev = Some((t, smoothed));
    }

    /// Moves the follower pose without leader motion (for example a scheduled
    /// GUI move) and emits the corresponding packet.
    pub fn command_directly(&mut self, t: f64, pose: Pose6) -> TrajectoryPacket {
        self.commanded = pose;
        self.virtual_pose = pose;
        self.emit(t, (1.0, 1.0))
    }

    fn emit(&mut self, t: f64, scale: (f64, f64)) -> TrajectoryPacket {
        let packet = TrajectoryPacket { seq: self.next_seq, t, pose: self.commanded, scale: [scale.0, scale.1] };
        self.next_seq += 1;
        packet
    }

    pub fn step(&mut self, sample: &TimedSample) -> Result<LeaderOutput, MotionError> {
        if let Some((prev_t, _)) = self.prev {
            if !(sample.t > prev_t) {
                return Err(MotionError::NonMonotonic { prev: prev_t, t: sample.t });
            }
        }
        let smoothed = self.ma.push(sample.pose);
        let mut twist = Twist::zero();
        let mut scale = (1.0, 1.0);
        let mut guard_engaged = false;
        if let Some((prev_t, prev_smoothed)) = self.prev {
            let dt = sample.t - prev_t;
            twist = Twist::between(&prev_smoothed, &smoothed, dt);
            scale = dynamic_scale(&twist, &self.scale);
            self.virtual_pose = incremental_map(&self.virtual_pose, &smoothed, &prev_smoothed, scale);
            if self.cfg.workspace_guard {
                guard_engaged = self.advance_guarded(dt);
            } else {
                self.commanded = self.virtual_pose;
            }
        }
        self.prev = Some((sample.t, smoothed));
        let packet = self.emit(sample.t, scale);
        Ok(LeaderOutput { packet, virtual_pose: self.virtual_pose, smoothed, hc_twist: twist, guard_engaged })
    }

    /// Moves the commanded pose toward the virtual pose at no more than the
    /// speed limits, stopping at the workspace boundary. Returns whether the
    /// motion was shortened.
    fn advance_guarded(&mut self, dt: f64) -> bool {
        let target = self.virtual_pose;
        let dp = target.p - self.commanded.p;
        let dr = log_deg(&(target.q * self.commanded.q.inverse()));
        let max_p = self.scale.max_v * dt;
        let max_r = self.scale.max_w * dt;
        let slack = 1.0 + 1e-9;
        if dp.norm() <= max_p * slack && dr.norm() <= max_r * slack && is_admissible(&target, &self.geometry) {
            self.commanded = target;
            return false;
        }
        let dp = clip_norm(&dp, max_p);
        let dr = clip_norm(&dr, max_r);
        let inc = Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z);
        let full = apply_increment(&self.commanded, &inc);
        if is_admissible(&full, &self.geometry) {
            self.commanded = full;
            return true;
        }
        if !is_admissible(&self.commanded, &self.geometry) {
            return true;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if is_admissible(&apply_increment(&self.commanded, &(inc * mid)), &self.geometry) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo > 0.0 {
            self.commanded = apply_increment(&self.commanded, &(inc * lo));
        }
        true
    }
}
