//! Leader-follower teleoperation: kinematics of the follower platform and the
//! leader device, the motion-transfer pipeline, stepper actuation against a
//! simulated plant, joint-limit haptic rendering, closed-loop simulation and
//! live sessions.

// Negated comparisons are how NaN inputs get rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geom;
pub mod haptic;
pub mod hc;
pub mod motion;
pub mod plant;
pub mod rsr;
pub mod session;
pub mod sim;

pub use geom::{Pose6, TimedSample, Twist, Wrench};
pub use haptic::{HapticConfig, HapticFrame, HapticRenderer};
pub use hc::HcGeometry;
pub use motion::{Dof, ScaleConfig, TrajectoryPacket};
pub use plant::MotorConfig;
pub use rsr::{JointVector, Margins, RsrGeometry, RsrGeometryConfig};
pub use session::{ClientMessage, Mode, ServerMessage, Session, SessionError, StateSnapshot};
pub use sim::{ClockMode, ErrorReport, RunConfig, RunOutput, RunReport, Scenario, SimError};
