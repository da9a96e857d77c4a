//! Shared inputs for the benchmarks.

use nalgebra::Vector3;
use teleop_core::geom::Pose6;
use teleop_core::hc::{solve_hc_ik, HcGeometry};
use teleop_core::rsr::RsrGeometry;

/// Poses stepping along a vertical sweep from home, `n` of them, reaching
/// `reach_mm` above and below.
pub fn vertical_sweep(g: &RsrGeometry, n: usize, reach_mm: f64) -> Vec<Pose6> {
    let home = g.home_pose();
    (0..n)
        .map(|k| {
            let z = reach_mm * (std::f64::consts::TAU * k as f64 / n.max(1) as f64).sin();
            home.translated(&Vector3::new(0.0, 0.0, z))
        })
        .collect()
}

/// Interior poses with small combined translation and rotation offsets.
pub fn interior_poses(g: &RsrGeometry, n: usize) -> Vec<Pose6> {
    let home = g.home_pose();
    (0..n)
        .map(|k| {
            let s = k as f64 / n.max(1) as f64 * std::f64::consts::TAU;
            home.translated(&Vector3::new(10.0 * s.sin(), 10.0 * s.cos(), 5.0 * (2.0 * s).sin()))
                .rotated(&Vector3::new(3.0 * s.cos(), 3.0 * s.sin(), 5.0 * s.sin()))
        })
        .collect()
}

/// Centroid of the leader device's reachable positions on a 10 mm grid.
pub fn hc_reference_point(g: &HcGeometry) -> Option<Vector3<f64>> {
    let axis = || (-33..=33).map(|i| f64::from(i) * 10.0);
    let (sum, n) = axis()
        .flat_map(|x| axis().flat_map(move |y| axis().map(move |z| Vector3::new(x, y, z))))
        .filter(|p| solve_hc_ik(p, g).is_ok())
        .fold((Vector3::zeros(), 0usize), |(sum, n), p| (sum + p, n + 1));
    (n > 0).then(|| sum / n as f64)
}
