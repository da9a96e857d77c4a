use serde::{Deserialize, Serialize};

use super::{KalmanConfig, LimiterConfig, MotionLimiter, PoseKalman, ScaleConfig, TrajectoryPacket, Upsampler};
use crate::geom::Pose6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FollowerConfig {
    pub kalman_enabled: bool,
    pub kalman: KalmanConfig,
    pub limiter: LimiterConfig,
    /// Input silence after which the upsampler output is flagged stale, seconds.
    pub stale_after_s: f64,
}

impl Default for FollowerConfig {
    fn default() -> Self {
        Self {
            kalman_enabled: true,
            kalman: KalmanConfig::default(),
            limiter: LimiterConfig::default(),
            stale_after_s: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerOutput {
    /// Commanded follower pose for this tick.
    pub pose: Pose6,
    pub stale: bool,
}

/// Follower loop body: upsampling, Kalman filtering and motion limiting.
#[derive(Debug, Clone)]
pub struct FollowerStage {
    upsampler: Upsampler,
    kalman: Option<PoseKalman>,
    limiter: MotionLimiter,
    last_seq: Option<u64>,
    seq_gaps: u64,
}

impl FollowerStage {
    /// `ratio` is the number of follower ticks per leader period and `dt` the
    /// follower tick in seconds.
    pub fn new(initial: Pose6, cfg: &FollowerConfig, scale: ScaleConfig, ratio: u32, dt: f64) -> Self {
        let stale_ticks = (cfg.stale_after_s / dt).round() as u64;
        Self {
            upsampler: Upsampler::new(initial, ratio, stale_ticks),
            kalman: cfg.kalman_enabled.then(|| PoseKalman::new(&initial, dt, &cfg.kalman)),
            limiter: MotionLimiter::new(initial, dt, cfg.limiter, scale),
            last_seq: None,
            seq_gaps: 0,
        }
    }

    pub fn set_scale(&mut self, scale: ScaleConfig) {
        self.limiter.set_scale(scale);
    }

    pub fn receive(&mut self, packet: &TrajectoryPacket) {
        if let Some(last) = self.last_seq {
            if packet.seq != last + 1 {
                self.seq_gaps += 1;
            }
        }
        self.last_seq = Some(packet.seq);
        self.upsampler.feed(packet.pose);
    }

    /// Packets that did not follow their predecessor's sequence number.
    pub fn seq_gaps(&self) -> u64 {
        self.seq_gaps
    }

    pub fn pose(&self) -> Pose6 {
        self.limiter.pose()
    }

    pub fn tick(&mut self) -> FollowerOutput {
        let up = self.upsampler.tick();
        let target = match &mut self.kalman {
            Some(k) => k.step(&up.pose),
            None => up.pose,
        };
        FollowerOutput { pose: self.limiter.step(&target), stale: up.stale }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn holds_initial_pose_without_input() {
        let home = Pose6::from_translation(Vector3::new(0.0, 0.0, 275.0));
        let mut f = FollowerStage::new(home, &FollowerConfig::default(), ScaleConfig::demo(), 10, 1e-4);
        for _ in 0..100 {
            assert_eq!(f.tick().pose, home);
        }
    }

    #[test]
    fn counts_sequence_gaps() {
        let home = Pose6::identity();
        let mut f = FollowerStage::new(home, &FollowerConfig::default(), ScaleConfig::demo(), 10, 1e-4);
        for seq in [0, 1, 2, 5, 6] {
            f.receive(&TrajectoryPacket { seq, t: seq as f64, pose: home, scale: [1.0, 1.0] });
        }
        assert_eq!(f.seq_gaps(), 1);
    }
}
