//! Closed-loop simulation: trajectory sources, the leader and follower loops
//! on a virtual or real clock, error metrics and log files.

mod io;
mod metrics;
mod run;
mod source;

pub use io::{write_outputs, write_trajectory_csv, PulseRow, WrenchRow};
pub use metrics::{error_metrics, AxisStats, ErrorReport, ErrorSample};
pub(crate) use run::FollowerSide;
pub use run::{
    replay_packets, run_closed_loop, ChannelStats, HapticStats, PipelineStats, PlantStats, RunOutput, RunReport,
};
pub use source::{
    read_trajectory_csv, synth_hand, HandConfig, HandProfile, SinusoidConfig, TRAJECTORY_HEADER,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::haptic::HapticConfig;
use crate::hc::HcGeometry;
use crate::motion::{FollowerConfig, LeaderConfig, MotionError, ScaleConfig};
use crate::plant::{MotorConfig, PlantError};
use crate::rsr::{RsrError, RsrGeometry, RsrGeometryConfig};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed input: {0}")]
    Format(String),
    #[error("trajectory has no samples in the compared span")]
    EmptyTrajectory,
    #[error("tick {tick}: {source}")]
    Motion { tick: u64, source: MotionError },
    #[error("tick {tick}: {source}")]
    Plant { tick: u64, source: PlantError },
    #[error(transparent)]
    Kinematics(#[from] RsrError),
}

impl SimError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        SimError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    /// Single-threaded, time advanced tick by tick; deterministic.
    #[default]
    Virtual,
    /// Leader and follower loops on their own threads, paced by the wall clock.
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    Sinusoid(SinusoidConfig),
    SynthHand(HandConfig),
    /// Leader trajectory CSV, relative to its first sample.
    Replay { path: PathBuf },
    /// Leader motion arrives from a live client; only valid for the server.
    Interactive,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario::Sinusoid(SinusoidConfig::default())
    }
}

/// Limits a run must stay within; unset limits are not checked.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub max_translation_mm: Option<f64>,
    pub max_rotation_deg: Option<f64>,
    pub max_speed_mm_s: Option<f64>,
    pub max_angular_speed_deg_s: Option<f64>,
    pub max_delay_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub clock: ClockMode,
    pub leader_rate_hz: f64,
    pub follower_rate_hz: f64,
    pub duration_s: f64,
    pub seed: u64,
    pub scenario: Scenario,
    pub scale: ScaleConfig,
    pub leader: LeaderConfig,
    pub follower: FollowerConfig,
    pub motors: MotorConfig,
    pub haptic_enabled: bool,
    pub haptic: HapticConfig,
    pub geometry: RsrGeometryConfig,
    pub hc_geometry: HcGeometry,
    pub channel_capacity: usize,
    /// Follower ticks per logged sample of the commanded and actual poses.
    pub log_decimation: u32,
    pub pulse_log: bool,
    pub thresholds: Thresholds,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            clock: ClockMode::Virtual,
            leader_rate_hz: 1000.0,
            follower_rate_hz: 10_000.0,
            duration_s: 20.0,
            seed: 1,
            scenario: Scenario::default(),
            scale: ScaleConfig::default(),
            leader: LeaderConfig::default(),
            follower: FollowerConfig::default(),
            motors: MotorConfig::default(),
            haptic_enabled: true,
            haptic: HapticConfig::default(),
            geometry: RsrGeometryConfig::default(),
            hc_geometry: HcGeometry::default(),
            channel_capacity: 64,
            log_decimation: 10,
            pulse_log: true,
            thresholds: Thresholds::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            SimError::Config(msg) => SimError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Follower ticks per leader tick.
    pub fn ratio(&self) -> u32 {
        (self.follower_rate_hz / self.leader_rate_hz).round() as u32
    }

    pub fn geometry(&self) -> Result<RsrGeometry, SimError> {
        RsrGeometry::new(self.geometry.clone()).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.leader_rate_hz > 0.0 && self.follower_rate_hz > 0.0) {
            return bad("rates must be positive".into());
        }
        if self.follower_rate_hz < self.leader_rate_hz {
            return bad("follower rate must be at least the leader rate".into());
        }
        let ratio = self.follower_rate_hz / self.leader_rate_hz;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return bad(format!("follower rate must be a whole multiple of the leader rate, got ratio {ratio}"));
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration must be non-negative, got {}", self.duration_s));
        }
        if self.channel_capacity == 0 || self.log_decimation == 0 {
            return bad("channel_capacity and log_decimation must be positive".into());
        }
        self.scale.validate().map_err(|e| SimError::Config(e.to_string()))?;
        self.follower.limiter.validate().map_err(|e| SimError::Config(e.to_string()))?;
        self.motors.validate().map_err(|e| SimError::Config(e.to_string()))?;
        self.haptic.validate().map_err(SimError::Config)?;
        self.hc_geometry.validate().map_err(|e| SimError::Config(e.to_string()))?;
        self.geometry()?;
        if self.leader.smoothing_window == 0 {
            return bad("smoothing_window must be positive".into());
        }
        match &self.scenario {
            Scenario::Sinusoid(s) => s.validate(),
            Scenario::SynthHand(h) if !(h.peak_speed_mm_s >= 0.0 && h.gap_s >= 0.0) => {
                bad("synthetic hand speeds and gaps must be non-negative".into())
            }
            _ => Ok(()),
        }
    }
}
