//! Leader-to-follower motion transfer: GUI trajectories, dynamic velocity
//! scaling with incremental mapping, smoothing, upsampling, Kalman prediction,
//! motion limiting and the packet channel between the two loops.

mod channel;
mod follower;
mod kalman;
mod leader;
mod limiter;
mod packet;
mod scaling;
mod smoothing;
mod trajectory;
mod upsample;

pub use channel::PacketChannel;
pub use follower::{FollowerConfig, FollowerOutput, FollowerStage};
pub use kalman::{kalman_predict, kalman_step, transition_matrix, KalmanAxisState, KalmanConfig, PoseKalman};
pub use leader::{LeaderConfig, LeaderOutput, LeaderStage};
pub use limiter::{LimiterConfig, MotionLimiter};
pub use packet::{read_packets, write_packets, TrajectoryPacket};
pub use scaling::{dynamic_scale, incremental_map, ScaleConfig};
pub use smoothing::{smooth_input, MovingAverage};
pub use trajectory::{gui_trajectory, gui_trajectory_pose, Dof};
pub use upsample::{UpsampleOutput, Upsampler};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("trajectory duration must be positive, got {0} s")]
    InvalidDuration(f64),
    #[error("sample time {t} s does not advance past {prev} s")]
    NonMonotonic { prev: f64, t: f64 },
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
}
