use std::collections::VecDeque;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::geom::Pose6;

/// Unweighted mean of a window of poses: arithmetic mean of translations and
/// normalised mean of quaternions, each flipped into the hemisphere of the
/// newest sample first.
///
/// # Panics
/// If `window` is empty.
pub fn smooth_input(window: &[Pose6]) -> Pose6 {
    assert!(!window.is_empty(), "smoothing window must not be empty");
    let newest = window[window.len() - 1].q;
    let mut p = Vector3::zeros();
    let mut q = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    for pose in window {
        p += pose.p;
        let c = pose.q.into_inner();
        q += if c.dot(&newest) < 0.0 { -c } else { c };
    }
    let n = window.len() as f64;
    let q = if window.iter().all(|x| x.q == newest) {
        newest
    } else {
        UnitQuaternion::new_normalize(q)
    };
    Pose6::new(p / n, q)
}

/// Streaming moving average over the most recent `window` poses.
#[derive(Debug, Clone)]
pub struct MovingAverage {
    window: usize,
    buf: VecDeque<Pose6>,
}

impl MovingAverage {
    pub fn new(window: usize) -> Self {
        let window = window.max(1);
        Self { window, buf: VecDeque::with_capacity(window) }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Group delay of a full window, in samples.
    pub fn group_delay_samples(&self) -> f64 {
        (self.window as f64 - 1.0) / 2.0
    }

    pub fn push(&mut self, pose: Pose6) -> Pose6 {
        if self.buf.len() == self.window {
            self.buf.pop_front();
        }
        self.buf.push_back(pose);
        let (a, b) = self.buf.as_slices();
        if b.is_empty() {
            smooth_input(a)
        } else {
            smooth_input(&self.buf.iter().copied().collect::<Vec<_>>())
        }
    }

    pub fn clear(&mut self) {
        self.buf.clear();
    }
}
