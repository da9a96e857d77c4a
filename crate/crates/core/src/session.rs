//! Live teleoperation session: the leader and follower loops driven by client
//! events instead of a recorded source, plus the JSON message protocol.
//!
//! A [`Session`] is a deterministic state machine advanced one leader tick at a
//! time; pacing it against the wall clock and moving messages over a socket
//! is left to the transport.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{exp_deg, Pose6, TimedSample, Twist, Wrench};
use crate::haptic::HapticRenderer;
use crate::motion::{gui_trajectory_pose, Dof, LeaderStage, PacketChannel, ScaleConfig};
use crate::rsr::{is_admissible, workspace_margin, Margins, RsrGeometry};
use crate::sim::{FollowerSide, RunConfig, SimError};

/// Leader events older than this, on the session clock, are dropped.
pub const STALE_EVENT_S: f64 = 0.1;
/// Path samples checked before a GUI move is accepted.
const GUI_PATH_SAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Idle,
    GuiMove,
    Teleop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeRequest {
    Idle,
    Teleop,
}

/// Client to server messages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    /// Leader motion increment: translation in mm and rotation vector in deg,
    /// both in the world frame. `t` is on the session clock.
    LeaderDelta { seq: u64, t: f64, dp: [f64; 3], dr: [f64; 3] },
    GuiMove { dof: Dof, dx: f64, dt: f64 },
    SetScale { max_v: f64, max_w: f64 },
    Mode { value: ModeRequest },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("{request} is not accepted in {mode:?} mode")]
    WrongMode { request: &'static str, mode: Mode },
    #[error("malformed event: {0}")]
    MalformedEvent(String),
    #[error("a GUI move is in progress")]
    Busy,
    #[error("target pose leaves the workspace")]
    LimitWouldBeViolated { margins: Margins },
    #[error("invalid scale: {0}")]
    InvalidScale(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    WrongMode,
    MalformedEvent,
    Busy,
    LimitWouldBeViolated,
    InvalidScale,
}

impl SessionError {
    pub fn code(&self) -> ErrorCode {
        match self {
            SessionError::WrongMode { .. } => ErrorCode::WrongMode,
            SessionError::MalformedEvent(_) => ErrorCode::MalformedEvent,
            SessionError::Busy => ErrorCode::Busy,
            SessionError::LimitWouldBeViolated { .. } => ErrorCode::LimitWouldBeViolated,
            SessionError::InvalidScale(_) => ErrorCode::InvalidScale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateFlags {
    /// The workspace guard shortened the last leader tick, or the follower
    /// touches a joint limit.
    pub limit: bool,
    pub haptic_violation: bool,
    /// The follower received no packets for the stale interval.
    pub stale_input: bool,
    pub gui_move: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionStats {
    pub events: u64,
    pub stale_events: u64,
    /// Snapshots dropped because the client read too slowly.
    pub slow_consumer_drops: u64,
    /// Leader ticks that ran late against the wall clock.
    pub budget_violations: u64,
    /// Packets dropped on the leader to follower channel.
    pub packets_dropped: u64,
    /// How far the loop trails the wall clock, ms.
    pub lag_ms: f64,
}

/// Immutable copy of the session state at one leader tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub version: u64,
    pub t: f64,
    pub session: u64,
    pub mode: Mode,
    pub scale: ScaleConfig,
    /// Leader motion mapped into the follower frame, before the workspace
    /// guard: `[x, y, z, qw, qx, qy, qz]`.
    pub leader: [f64; 7],
    /// Plant pose.
    pub follower: [f64; 7],
    /// Plant joints: three rotary angles (deg) then three leg lengths (mm).
    pub joints: [f64; 6],
    /// Workspace margins of the plant pose; negative outside.
    pub margins: Margins,
    /// Filtered haptic wrench: force (N) then torque (N·m).
    pub wrench: [f64; 6],
    pub flags: StateFlags,
    pub stats: SessionStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    LeaderDelta,
    GuiMove,
    SetScale,
    Mode,
}

/// Server to client messages.
// Nearly every message is a snapshot, so boxing it would not save memory.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(StateSnapshot),
    Ack {
        request: RequestKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seq: Option<u64>,
        /// The leader event was too old and was not applied.
        #[serde(default)]
        stale: bool,
    },
    GuiMoveDone { t: f64, dof: Dof },
    Error {
        code: ErrorCode,
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seq: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        margins: Option<Margins>,
    },
}

impl ServerMessage {
    pub fn is_state(&self) -> bool {
        matches!(self, ServerMessage::State(_))
    }

    fn error(e: &SessionError, seq: Option<u64>) -> Self {
        let margins = match e {
            SessionError::LimitWouldBeViolated { margins } => Some(*margins),
            _ => None,
        };
        ServerMessage::Error { code: e.code(), message: e.to_string(), seq, margins }
    }
}

#[derive(Debug, Clone, Copy)]
struct GuiPlan {
    start: Pose6,
    dof: Dof,
    dx: f64,
    t0: f64,
    dt: f64,
}

pub struct Session {
    id: u64,
    rate: f64,
    ratio: u32,
    geometry: RsrGeometry,
    mode: Mode,
    leader: LeaderStage,
    renderer: Option<HapticRenderer>,
    follower: FollowerSide,
    channel: PacketChannel,
    ticks: u64,
    /// Integrated leader device pose.
    hc_pose: Pose6,
    last_seq: Option<u64>,
    gui: Option<GuiPlan>,
    last_virtual: Pose6,
    wrench: Wrench,
    guard_engaged: bool,
    haptic_violation: bool,
    version: u64,
    stats: SessionStats,
    pending: Vec<ServerMessage>,
}

impl Session {
    /// Starts idle at the home pose. Scenario and clock fields of the config
    /// are ignored; the transport paces the loop.
    pub fn new(cfg: &RunConfig, id: u64) -> Result<Self, SimError> {
        let mut cfg = cfg.clone();
        cfg.scenario = Default::default();
        cfg.validate()?;
        let geometry = cfg.geometry()?;
        let home = geometry.home_pose();
        Ok(Self {
            id,
            rate: cfg.leader_rate_hz,
            ratio: cfg.ratio(),
            leader: LeaderStage::new(home, cfg.leader, cfg.scale, geometry.clone()),
            renderer: cfg.haptic_enabled.then(|| HapticRenderer::new(cfg.haptic, geometry.clone())),
            follower: FollowerSide::new(&cfg, home, &geometry, false)?,
            channel: PacketChannel::new(cfg.channel_capacity),
            geometry,
            mode: Mode::Idle,
            ticks: 0,
            hc_pose: Pose6::identity(),
            last_seq: None,
            gui: None,
            last_virtual: home,
            wrench: Wrench::zero(),
            guard_engaged: false,
            haptic_violation: false,
            version: 0,
            stats: SessionStats::default(),
            pending: Vec::new(),
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Session clock: time of the last completed leader tick, seconds.
    pub fn t(&self) -> f64 {
        self.ticks as f64 / self.rate
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn leader_rate_hz(&self) -> f64 {
        self.rate
    }

    pub fn follower_pose(&self) -> Pose6 {
        self.follower.plant.pose()
    }

    pub fn stats(&self) -> &SessionStats {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut SessionStats {
        &mut self.stats
    }

    /// Parses and applies one text frame, always producing a reply.
    pub fn handle_text(&mut self, text: &str) -> ServerMessage {
        match serde_json::from_str::<ClientMessage>(text) {
            Ok(msg) => self.handle(&msg),
            Err(e) => {
                let seq = serde_json::from_str::<serde_json::Value>(text).ok().and_then(|v| v.get("seq")?.as_u64());
                ServerMessage::error(&SessionError::MalformedEvent(e.to_string()), seq)
            }
        }
    }

    /// Applies one message, returning the acknowledgement or the error reply.
    pub fn handle(&mut self, msg: &ClientMessage) -> ServerMessage {
        let seq = match msg {
            ClientMessage::LeaderDelta { seq, .. } => Some(*seq),
            _ => None,
        };
        match self.apply(msg) {
            Ok(reply) => reply,
            Err(e) => ServerMessage::error(&e, seq),
        }
    }

    fn apply(&mut self, msg: &ClientMessage) -> Result<ServerMessage, SessionError> {
        match *msg {
            ClientMessage::LeaderDelta { seq, t, dp, dr } => {
                let stale = self.leader_event(seq, t, dp, dr)?;
                Ok(ServerMessage::Ack { request: RequestKind::LeaderDelta, seq: Some(seq), stale })
            }
            ClientMessage::GuiMove { dof, dx, dt } => {
                self.start_gui_move(dof, dx, dt)?;
                Ok(ServerMessage::Ack { request: RequestKind::GuiMove, seq: None, stale: false })
            }
            ClientMessage::SetScale { max_v, max_w } => {
                self.set_scale(ScaleConfig { max_v, max_w })?;
                Ok(ServerMessage::Ack { request: RequestKind::SetScale, seq: None, stale: false })
            }
            ClientMessage::Mode { value } => {
                self.set_mode(value)?;
                Ok(ServerMessage::Ack { request: RequestKind::Mode, seq: None, stale: false })
            }
        }
    }

    /// Folds a leader increment into the device pose sampled by the next
    /// leader tick. Returns whether the event was stale and dropped.
    pub fn leader_event(&mut self, seq: u64, t: f64, dp: [f64; 3], dr: [f64; 3]) -> Result<bool, SessionError> {
        if self.mode != Mode::Teleop {
            return Err(SessionError::WrongMode { request: "leader_delta", mode: self.mode });
        }
        if !(t.is_finite() && dp.iter().chain(dr.iter()).all(|v| v.is_finite())) {
            return Err(SessionError::MalformedEvent("non-finite value".into()));
        }
        if let Some(last) = self.last_seq {
            if seq <= last {
                return Err(SessionError::MalformedEvent(format!("seq {seq} does not follow {last}")));
            }
        }
        self.last_seq = Some(seq);
        self.stats.events += 1;
        if t < self.t() - STALE_EVENT_S {
            self.stats.stale_events += 1;
            return Ok(true);
        }
        let p = self.hc_pose.p + Vector3::from(dp);
        let q = exp_deg(&Vector3::from(dr)) * self.hc_pose.q;
        self.hc_pose = Pose6::new(p, q);
        Ok(false)
    }

    /// Schedules a time-controlled move of one coordinate from the current
    /// commanded pose, starting now. A zero move completes immediately.
    pub fn start_gui_move(&mut self, dof: Dof, dx: f64, dt: f64) -> Result<(), SessionError> {
        match self.mode {
            Mode::Idle => {}
            Mode::GuiMove => return Err(SessionError::Busy),
            Mode::Teleop => return Err(SessionError::WrongMode { request: "gui_move", mode: self.mode }),
        }
        if !(dx.is_finite() && dt.is_finite() && dt > 0.0) {
            return Err(SessionError::MalformedEvent(format!("gui move needs finite dx and positive dt, got dx {dx}, dt {dt}")));
        }
        if dx == 0.0 {
            self.pending.push(ServerMessage::GuiMoveDone { t: self.t(), dof });
            return Ok(());
        }
        let start = self.leader.commanded();
        let t0 = self.t();
        for i in 1..=GUI_PATH_SAMPLES {
            let t = t0 + dt * i as f64 / GUI_PATH_SAMPLES as f64;
            let pose = gui_trajectory_pose(&start, dof, dx, t0, dt, t).map_err(|e| SessionError::MalformedEvent(e.to_string()))?;
            if !is_admissible(&pose, &self.geometry) {
                let target = gui_trajectory_pose(&start, dof, dx, t0, dt, t0 + dt).unwrap_or(pose);
                return Err(SessionError::LimitWouldBeViolated { margins: workspace_margin(&target, &self.geometry) });
            }
        }
        self.gui = Some(GuiPlan { start, dof, dx, t0, dt });
        self.mode = Mode::GuiMove;
        Ok(())
    }

    pub fn set_scale(&mut self, scale: ScaleConfig) -> Result<(), SessionError> {
        scale.validate().map_err(|e| SessionError::InvalidScale(e.to_string()))?;
        self.leader.set_scale(scale);
        self.follower.stage.set_scale(scale);
        Ok(())
    }

    pub fn set_mode(&mut self, value: ModeRequest) -> Result<(), SessionError> {
        if self.mode == Mode::GuiMove {
            return Err(SessionError::Busy);
        }
        let next = match value {
            ModeRequest::Idle => Mode::Idle,
            ModeRequest::Teleop => Mode::Teleop,
        };
        if next == Mode::Teleop && self.mode != Mode::Teleop {
            // Leader motion is relative; anchor it now so events that arrive
            // before the next tick count as motion.
            self.leader.anchor_input(self.t(), self.hc_pose);
        }
        self.mode = next;
        Ok(())
    }

    /// Advances one leader tick and the follower ticks within it. Returns
    /// events raised since the previous tick.
    pub fn tick(&mut self) -> Result<Vec<ServerMessage>, SimError> {
        self.ticks += 1;
        let k = self.ticks;
        let t = self.t();
        let mut events = std::mem::take(&mut self.pending);
        self.guard_engaged = false;
        let packet = match self.mode {
            Mode::Teleop => {
                let out = self
                    .leader
                    .step(&TimedSample::new(t, self.hc_pose))
                    .map_err(|source| SimError::Motion { tick: k, source })?;
                self.guard_engaged = out.guard_engaged;
                out.packet
            }
            Mode::GuiMove => {
                let plan = self.gui.expect("gui move mode has a plan");
                let pose = gui_trajectory_pose(&plan.start, plan.dof, plan.dx, plan.t0, plan.dt, t)
                    .map_err(|source| SimError::Motion { tick: k, source })?;
                if t >= plan.t0 + plan.dt {
                    self.gui = None;
                    self.mode = Mode::Idle;
                    events.push(ServerMessage::GuiMoveDone { t, dof: plan.dof });
                }
                self.leader.command_directly(t, pose)
            }
            // Keeps the follower fed so it never reports stale input while idle.
            Mode::Idle => self.leader.command_directly(t, self.leader.commanded()),
        };
        self.channel.send(packet);
        let virtual_pose = match self.mode {
            Mode::Teleop => self.leader.virtual_pose(),
            _ => packet.pose,
        };
        let twist = Twist::between(&self.last_virtual, &virtual_pose, 1.0 / self.rate);
        self.last_virtual = virtual_pose;
        if let Some(r) = &mut self.renderer {
            let f = r.tick(&virtual_pose, &twist);
            self.wrench = f.wrench;
            self.haptic_violation = f.violating;
        }
        for _ in 0..self.ratio {
            self.follower.step(&self.channel)?;
        }
        self.stats.packets_dropped = self.channel.dropped();
        Ok(events)
    }

    /// Copies the current state under a new version number.
    pub fn snapshot(&mut self) -> StateSnapshot {
        self.version += 1;
        let follower = self.follower.plant.pose();
        let margins = workspace_margin(&follower, &self.geometry);
        let at_limit = margins.iter().any(|m| *m <= 0.0);
        StateSnapshot {
            version: self.version,
            t: self.t(),
            session: self.id,
            mode: self.mode,
            scale: self.leader.scale(),
            leader: self.last_virtual.to_pose7(),
            follower: follower.to_pose7(),
            joints: self.follower.plant.q().to_array(),
            margins,
            wrench: self.wrench.to_array(),
            flags: StateFlags {
                limit: self.guard_engaged || at_limit,
                haptic_violation: self.haptic_violation,
                stale_input: self.follower.last_stale,
                gui_move: self.mode == Mode::GuiMove,
            },
            stats: self.stats,
        }
    }
}
