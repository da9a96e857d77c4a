use std::f64::consts::PI;

/// Integrates the motor phase over one tick and evaluates the pulse level:
/// high when `sin(phase) > 0`, low otherwise (including `sin(phase) = 0`).
pub fn pulse_step(phase: f64, qdot: f64, dt: f64, k: f64) -> (f64, bool) {
    let phase = phase + k * dt * qdot;
    (phase, phase.sin() > 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PulseOutput {
    pub level: bool,
    /// `true` for positive motion.
    pub dir: bool,
    pub rising: bool,
}

/// Pulse/direction signal generator for one motor.
///
/// The phase integrates the commanded rate and the pulse level follows
/// `sin(phase) > 0`, read half a period later for reverse motion so that
/// reverse steps fire at the same phase crossings as forward ones. The
/// direction bit follows the sign of the rate and holds while the rate is zero.
///
/// Every rising edge is one step in the direction-bit direction, so edges are
/// only raised when the phase has crossed a multiple of 2π not yet signalled.
/// That keeps the net step count equal to the crossing count even when the
/// rate reverses mid-pulse: a pulse high at a reversal, or high while another
/// crossing is already owed, ends on that frame (so the direction never
/// changes while high) and the owed step fires on the next.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseGenerator {
    phase: f64,
    dir: bool,
    level: bool,
    /// Net steps signalled so far.
    steps: i64,
    overspeed: u64,
}

impl Default for PulseGenerator {
    fn default() -> Self {
        Self::new()
    }
}

impl PulseGenerator {
    /// Starts half a period below the first forward crossing, so the first
    /// step in either direction fires after half a step of commanded motion
    /// and the net step count rounds the integrated motion.
    pub fn new() -> Self {
        Self { phase: -PI, dir: true, level: false, steps: 0, overspeed: 0 }
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn level(&self) -> bool {
        self.level
    }

    pub fn dir(&self) -> bool {
        self.dir
    }

    /// Net steps signalled so far.
    pub fn steps(&self) -> i64 {
        self.steps
    }

    /// Ticks on which the phase advanced by more than half a period, so edges
    /// may have been lost.
    pub fn overspeed_ticks(&self) -> u64 {
        self.overspeed
    }

    /// Steps the phase crossings call for: one per multiple of 2π passed
    /// upward from the start, minus one per multiple passed downward.
    fn crossings(&self) -> i64 {
        (self.phase / (2.0 * PI)).floor() as i64 + 1
    }

    pub fn step(&mut self, qdot: f64, dt: f64, k: f64) -> PulseOutput {
        if (k * dt * qdot).abs() > PI {
            self.overspeed += 1;
        }
        let dir = if qdot > 0.0 {
            true
        } else if qdot < 0.0 {
            false
        } else {
            self.dir
        };
        let reversed = dir != self.dir;
        let (phase, _) = pulse_step(self.phase, qdot, dt, k);
        self.phase = phase;
        let raw = if dir { phase.sin() > 0.0 } else { (phase + PI).sin() > 0.0 };
        let owed = self.crossings() - self.steps;
        let level = if self.level {
            raw && !reversed && owed == 0
        } else if owed != 0 && (owed > 0) == dir {
            self.steps += owed.signum();
            true
        } else {
            false
        };
        let rising = level && !self.level;
        self.dir = dir;
        self.level = level;
        PulseOutput { level, dir, rising }
    }
}
