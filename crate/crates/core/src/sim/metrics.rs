use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geom::{interpolate, pose_delta, Pose6, TimedSample};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AxisStats {
    pub mean: [f64; 3],
    pub max: [f64; 3],
}

/// Absolute error at one grid time: translation per axis (mm) and Euler-angle
/// difference per axis (deg).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSample {
    pub t: f64,
    pub translation: [f64; 3],
    pub rotation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorReport {
    pub samples: usize,
    pub translation_mm: AxisStats,
    pub rotation_deg: AxisStats,
    /// Euclidean translation error.
    pub mean_translation_norm_mm: f64,
    pub max_translation_norm_mm: f64,
    /// Angle of the relative rotation.
    pub mean_rotation_angle_deg: f64,
    pub max_rotation_angle_deg: f64,
    #[serde(skip)]
    pub series: Vec<ErrorSample>,
}

/// Pose of a trajectory at `t` inside its time span, interpolating linearly on
/// translation and spherically on orientation. `hint` carries the bracketing
/// index between calls with increasing `t`.
fn sample_at(traj: &[TimedSample], t: f64, hint: &mut usize) -> Pose6 {
    while *hint + 1 < traj.len() && traj[*hint + 1].t <= t {
        *hint += 1;
    }
    let a = &traj[*hint];
    if a.t == t || *hint + 1 == traj.len() {
        return a.pose;
    }
    let b = &traj[*hint + 1];
    interpolate(&a.pose, &b.pose, (t - a.t) / (b.t - a.t))
}

/// Compares two trajectories on the union of their timestamps inside the
/// overlapping time span, so every original sample is compared exactly and
/// swapping the arguments gives the same report.
pub fn error_metrics(desired: &[TimedSample], actual: &[TimedSample]) -> Result<ErrorReport, SimError> {
    if desired.is_empty() || actual.is_empty() {
        return Err(SimError::EmptyTrajectory);
    }
    let start = desired[0].t.max(actual[0].t);
    let end = desired[desired.len() - 1].t.min(actual[actual.len() - 1].t);
    let mut grid: Vec<f64> = desired.iter().chain(actual.iter()).map(|s| s.t).filter(|t| *t >= start && *t <= end).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.is_empty() {
        return Err(SimError::EmptyTrajectory);
    }
    let (mut hd, mut ha) = (0, 0);
    let mut series = Vec::with_capacity(grid.len());
    let mut report = ErrorReport { samples: grid.len(), ..Default::default() };
    let mut sums = [0.0; 8];
    for t in grid {
        let d = sample_at(desired, t, &mut hd);
        let a = sample_at(actual, t, &mut ha);
        let (dp, dr) = pose_delta(&d, &a);
        let e = ErrorSample { t, translation: dp.abs().into(), rotation: dr.abs().into() };
        let norm = dp.norm();
        let angle = d.q.angle_to(&a.q).to_degrees();
        for i in 0..3 {
            sums[i] += e.translation[i];
            sums[3 + i] += e.rotation[i];
            report.translation_mm.max[i] = report.translation_mm.max[i].max(e.translation[i]);
            report.rotation_deg.max[i] = report.rotation_deg.max[i].max(e.rotation[i]);
        }
        sums[6] += norm;
        sums[7] += angle;
        report.max_translation_norm_mm = report.max_translation_norm_mm.max(norm);
        report.max_rotation_angle_deg = report.max_rotation_angle_deg.max(angle);
        series.push(e);
    }
    let n = series.len() as f64;
    for i in 0..3 {
        report.translation_mm.mean[i] = sums[i] / n;
        report.rotation_deg.mean[i] = sums[3 + i] / n;
    }
    report.mean_translation_norm_mm = sums[6] / n;
    report.mean_rotation_angle_deg = sums[7] / n;
    report.series = series;
    Ok(report)
}
