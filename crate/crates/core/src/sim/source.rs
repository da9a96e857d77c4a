use std::f64::consts::PI;
use std::io::Read;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geom::{is_strictly_increasing, Pose6, TimedSample};

/// Per-axis sinusoid about a start pose: translation in mm, rotation in deg
/// (intrinsic X-Y-Z Euler offsets).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinusoidConfig {
    pub amplitude: [f64; 6],
    pub period_s: [f64; 6],
}

impl Default for SinusoidConfig {
    fn default() -> Self {
        Self { amplitude: [5.0, 5.0, 5.0, 1.0, 1.0, 1.0], period_s: [8.0, 10.0, 12.0, 10.0, 12.0, 14.0] }
    }
}

impl SinusoidConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.period_s.iter().all(|p| *p > 0.0) && self.amplitude.iter().all(|a| a.is_finite()) {
            Ok(())
        } else {
            Err(SimError::Config(format!("sinusoid periods must be positive, got {:?}", self.period_s)))
        }
    }

    /// Pose at time `t` seconds.
    pub fn pose(&self, t: f64) -> Pose6 {
        Pose6::from_array6(std::array::from_fn(|i| self.amplitude[i] * (2.0 * PI * t / self.period_s[i]).sin()))
    }

    pub fn samples(&self, rate_hz: f64, duration_s: f64) -> Vec<TimedSample> {
        let n = (duration_s * rate_hz).round() as usize;
        (0..=n).map(|k| k as f64 / rate_hz).map(|t| TimedSample::new(t, self.pose(t))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandProfile {
    /// Sum of sinusoids, no gaps.
    Smooth,
    /// Smooth motion with communication gaps, each followed by a position jump.
    Breakage,
}

/// Synthetic hand motion at 1 kHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HandConfig {
    pub profile: HandProfile,
    /// Peak translational speed of the base motion, mm/s.
    pub peak_speed_mm_s: f64,
    /// Peak angular speed of the base motion, deg/s.
    pub peak_angular_deg_s: f64,
    /// Number of gaps for the breakage profile.
    pub gaps: usize,
    pub gap_s: f64,
    /// Position jump across each gap, mm.
    pub jump_mm: f64,
}

impl Default for HandConfig {
    fn default() -> Self {
        Self {
            profile: HandProfile::Smooth,
            peak_speed_mm_s: 20.0,
            peak_angular_deg_s: 2.0,
            gaps: 3,
            gap_s: 0.05,
            jump_mm: 5.0,
        }
    }
}

const HAND_RATE_HZ: f64 = 1000.0;
const COMPONENTS: usize = 3;

/// Seeded synthetic leader motion: per axis a sum of sinusoids between 0.2 and
/// 1 Hz, rescaled so the sampled speed peaks at the configured values. The
/// breakage profile removes `gap_s` of samples at `gaps` random instants and
/// offsets everything after each gap by `jump_mm` in a random direction.
pub fn synth_hand(seed: u64, duration_s: f64, cfg: &HandConfig) -> Vec<TimedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (duration_s * HAND_RATE_HZ).round() as usize;
    let terms: Vec<[(f64, f64, f64); COMPONENTS]> = (0..6)
        .map(|_| {
            std::array::from_fn(|_| {
                (rng.random_range(0.5..1.0), rng.random_range(0.2..1.0), rng.random_range(0.0..2.0 * PI))
            })
        })
        .collect();
    let base = |axis: usize, t: f64| -> f64 {
        terms[axis].iter().map(|(a, f, ph)| a * ((2.0 * PI * f * t + ph).sin() - ph.sin())).sum()
    };
    let raw: Vec<([f64; 3], [f64; 3])> = (0..=n)
        .map(|k| {
            let t = k as f64 / HAND_RATE_HZ;
            (std::array::from_fn(|i| base(i, t)), std::array::from_fn(|i| base(i + 3, t)))
        })
        .collect();
    let peak = |part: usize| {
        let sel = |s: &([f64; 3], [f64; 3])| Vector3::from(if part == 0 { s.0 } else { s.1 });
        raw.windows(2).map(|w| (sel(&w[1]) - sel(&w[0])).norm() * HAND_RATE_HZ).fold(0.0, f64::max)
    };
    let peak_v = peak(0);
    let peak_w = peak(1);
    let kv = if peak_v > 0.0 { cfg.peak_speed_mm_s / peak_v } else { 0.0 };
    let kw = if peak_w > 0.0 { cfg.peak_angular_deg_s / peak_w } else { 0.0 };

    let mut cuts: Vec<(usize, usize, Vector3<f64>)> = Vec::new();
    if cfg.profile == HandProfile::Breakage && cfg.gaps > 0 {
        let gap = (cfg.gap_s * HAND_RATE_HZ).round() as usize;
        // Gaps start in equal slots of the run, clear of both ends.
        let slot = n / (cfg.gaps + 1);
        for g in 0..cfg.gaps {
            let start = slot * (g + 1) + rng.random_range(0..slot.max(2) / 2);
            let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let dir = if dir.norm() > 1e-9 { dir.normalize() } else { Vector3::x() };
            cuts.push((start, start + gap, dir * cfg.jump_mm));
        }
    }

    let mut out = Vec::with_capacity(raw.len());
    let mut offset = Vector3::zeros();
    for (k, (p, r)) in raw.iter().enumerate() {
        if cuts.iter().any(|(a, b, _)| k >= *a && k < *b) {
            continue;
        }
        if let Some((_, _, jump)) = cuts.iter().find(|(_, b, _)| *b == k) {
            offset += jump;
        }
        let p = Vector3::from(*p) * kv + offset;
        let r = Vector3::from(*r) * kw;
        out.push(TimedSample::new(k as f64 / HAND_RATE_HZ, Pose6::from_euler_deg(p, r)));
    }
    out
}

pub const TRAJECTORY_HEADER: [&str; 7] = ["t_sec", "x_mm", "y_mm", "z_mm", "alpha_deg", "beta_deg", "gamma_deg"];

/// Reads a trajectory CSV (`t_sec,x_mm,y_mm,z_mm,alpha_deg,beta_deg,gamma_deg`).
pub fn read_trajectory_csv<R: Read>(r: R) -> Result<Vec<TimedSample>, SimError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(|e| SimError::Format(e.to_string()))?;
    if header.iter().ne(TRAJECTORY_HEADER.iter().copied()) {
        return Err(SimError::Format(format!("expected header {}, got {}", TRAJECTORY_HEADER.join(","), header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| SimError::Format(e.to_string()))?;
        let v: Vec<f64> = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| SimError::Format(format!("row {}: {e}", line + 2)))?;
        if v.len() != 7 || v.iter().any(|x| !x.is_finite()) {
            return Err(SimError::Format(format!("row {}: expected 7 finite numbers", line + 2)));
        }
        out.push(TimedSample::new(v[0], Pose6::from_array6([v[1], v[2], v[3], v[4], v[5], v[6]])));
    }
    if !is_strictly_increasing(&out) {
        return Err(SimError::Format("timestamps must be strictly increasing".into()));
    }
    Ok(out)
}
