//! Follower actuation: joint rates from the commanded twist, pulse/direction
//! generation per motor, and a simulated stepper plant that integrates the
//! pulses into joint values and re-estimates the pose.

mod pulse;
mod stepper;

pub use pulse::{pulse_step, PulseGenerator, PulseOutput};
pub use stepper::{plant_apply, MotorConfig, Plant, PlantApply, PlantState, PulseFrame};

use thiserror::Error;

use crate::geom::{Pose6, Twist};
use crate::rsr::{rsr_jacobian, JointVector, RsrError, RsrGeometry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("Jacobian is singular at the commanded pose (condition {0:e})")]
    SingularPose(f64),
    #[error(transparent)]
    Kinematics(#[from] RsrError),
    #[error("invalid motor configuration: {0}")]
    InvalidConfig(String),
}

/// Joint rates `J(x) * twist`, in deg/s for revolute and mm/s for prismatic joints.
pub fn joint_rates(twist: &Twist, x: &Pose6, g: &RsrGeometry) -> Result<JointVector, PlantError> {
    let j = rsr_jacobian(x, g)?;
    if j.singular {
        return Err(PlantError::SingularPose(j.condition));
    }
    Ok(j.joint_rates(twist))
}
