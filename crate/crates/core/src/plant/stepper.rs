use serde::{Deserialize, Serialize};

use super::{PlantError, PulseGenerator};
use crate::geom::Pose6;
use crate::rsr::{rsr_fk, JointVector, RsrGeometry};

/// Stepper drive parameters. Motors 0-2 drive the revolute joints, 3-5 the
/// prismatic joints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotorConfig {
    pub steps_per_rev: u32,
    /// Lead screw travel per motor revolution, mm.
    pub linear_lead_mm: f64,
    /// Motor step angle, deg.
    pub rotary_step_deg: f64,
    /// Gear reduction between rotary motor and revolute joint.
    pub rotary_reduction: f64,
}

impl Default for MotorConfig {
    fn default() -> Self {
        Self { steps_per_rev: 200, linear_lead_mm: 2.0, rotary_step_deg: 1.8, rotary_reduction: 100.0 }
    }
}

impl MotorConfig {
    pub fn validate(&self) -> Result<(), PlantError> {
        if self.steps_per_rev > 0 && self.linear_lead_mm > 0.0 && self.rotary_step_deg > 0.0 && self.rotary_reduction > 0.0 {
            Ok(())
        } else {
            Err(PlantError::InvalidConfig(format!("motor parameters must be positive, got {self:?}")))
        }
    }

    /// Joint travel per step: deg for motors 0-2, mm for motors 3-5.
    pub fn step_size(&self, motor: usize) -> f64 {
        if motor < 3 {
            self.rotary_step_deg / self.rotary_reduction
        } else {
            self.linear_lead_mm / self.steps_per_rev as f64
        }
    }

    /// Phase gain: radians of pulse phase per unit of joint travel, one pulse
    /// period per step.
    pub fn gain(&self, motor: usize) -> f64 {
        2.0 * std::f64::consts::PI / self.step_size(motor)
    }
}

/// Pulse and direction lines of all six motors on one follower tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseFrame {
    pub tick: u64,
    pub level: [bool; 6],
    /// `true` for positive motion.
    pub dir: [bool; 6],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    /// Joint values at the start of the run.
    pub q0: JointVector,
    /// Net steps taken per motor.
    pub steps: [i64; 6],
    /// Pulse levels seen on the previous frame.
    pub last_level: [bool; 6],
    /// Pose estimate from forward kinematics.
    pub pose: Pose6,
}

impl PlantState {
    pub fn new(q0: JointVector, pose: Pose6) -> Self {
        Self { q0, steps: [0; 6], last_level: [false; 6], pose }
    }

    pub fn q(&self, motors: &MotorConfig) -> JointVector {
        let base = self.q0.to_array();
        JointVector::from_array(std::array::from_fn(|i| base[i] + self.steps[i] as f64 * motors.step_size(i)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantApply {
    pub state: PlantState,
    /// A step was refused because it would cross a joint limit.
    pub limit_hit: bool,
}

/// Advances each motor one step per rising edge in its direction, refusing
/// steps past the joint limits, then re-estimates the pose warm-started at the
/// previous estimate.
pub fn plant_apply(
    state: &PlantState,
    frame: &PulseFrame,
    motors: &MotorConfig,
    g: &RsrGeometry,
) -> Result<PlantApply, PlantError> {
    let mut next = *state;
    let mut limit_hit = false;
    let mut moved = false;
    let q0 = state.q0.to_array();
    let [th_min, th_max] = g.theta_limits_deg();
    for (i, q0) in q0.iter().enumerate() {
        if frame.level[i] && !state.last_level[i] {
            let delta = if frame.dir[i] { 1 } else { -1 };
            let value = q0 + (next.steps[i] + delta) as f64 * motors.step_size(i);
            let (lo, hi) = if i < 3 { (th_min, th_max) } else { (g.d_min(), g.d_max()) };
            if value < lo || value > hi {
                limit_hit = true;
            } else {
                next.steps[i] += delta;
                moved = true;
            }
        }
    }
    next.last_level = frame.level;
    if moved {
        next.pose = rsr_fk(&next.q(motors), &state.pose, g)?.pose;
    }
    Ok(PlantApply { state: next, limit_hit })
}

/// Pulse generators plus plant state, driven once per follower tick.
#[derive(Debug, Clone)]
pub struct Plant {
    motors: MotorConfig,
    geometry: RsrGeometry,
    generators: [PulseGenerator; 6],
    state: PlantState,
    tick: u64,
    limit_hits: u64,
}

impl Plant {
    pub fn new(initial: Pose6, motors: MotorConfig, geometry: RsrGeometry) -> Result<Self, PlantError> {
        motors.validate()?;
        let q0 = crate::rsr::rsr_ik(&initial, &geometry)?.joints;
        let generators = [PulseGenerator::new(); 6];
        let mut state = PlantState::new(q0, initial);
        state.last_level = generators.map(|g| g.level());
        Ok(Self {
            motors,
            geometry,
            generators,
            state,
            tick: 0,
            limit_hits: 0,
        })
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn q(&self) -> JointVector {
        self.state.q(&self.motors)
    }

    pub fn pose(&self) -> Pose6 {
        self.state.pose
    }

    pub fn limit_hits(&self) -> u64 {
        self.limit_hits
    }

    pub fn overspeed_ticks(&self) -> u64 {
        self.generators.iter().map(|g| g.overspeed_ticks()).sum()
    }

    /// Generates this tick's pulse frame for the joint rates and applies it.
    pub fn step(&mut self, rates: &JointVector, dt: f64) -> Result<(PulseFrame, bool), PlantError> {
        let r = rates.to_array();
        let mut frame = PulseFrame { tick: self.tick, level: [false; 6], dir: [true; 6] };
        for (i, (gen, rate)) in self.generators.iter_mut().zip(r).enumerate() {
            let out = gen.step(rate, dt, self.motors.gain(i));
            frame.level[i] = out.level;
            frame.dir[i] = out.dir;
        }
        let applied = plant_apply(&self.state, &frame, &self.motors, &self.geometry)?;
        self.state = applied.state;
        if applied.limit_hit {
            self.limit_hits += 1;
        }
        self.tick += 1;
        Ok((frame, applied.limit_hit))
    }
}
