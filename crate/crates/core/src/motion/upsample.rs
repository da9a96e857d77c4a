use crate::geom::{interpolate, Pose6};

/// Linear upsampler from the leader rate to the follower rate.
///
/// Each arriving sample starts a new segment from the current output to that
/// sample, traversed over one input period (`ratio` output ticks). Between
/// arrivals the output holds at the last sample. Works in tick counts so the
/// output grid is exact.
#[derive(Debug, Clone)]
pub struct Upsampler {
    ratio: u32,
    stale_ticks: u64,
    from: Pose6,
    to: Pose6,
    step: u32,
    since_feed: u64,
    current: Pose6,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpsampleOutput {
    pub pose: Pose6,
    /// No sample has arrived for longer than the stale threshold.
    pub stale: bool,
}

impl Upsampler {
    pub fn new(initial: Pose6, ratio: u32, stale_ticks: u64) -> Self {
        let ratio = ratio.max(1);
        Self { ratio, stale_ticks, from: initial, to: initial, step: ratio, since_feed: 0, current: initial }
    }

    pub fn feed(&mut self, sample: Pose6) {
        self.from = self.current;
        self.to = sample;
        self.step = 0;
        self.since_feed = 0;
    }

    pub fn tick(&mut self) -> UpsampleOutput {
        if self.step < self.ratio {
            self.step += 1;
            self.current = if self.step == self.ratio {
                self.to
            } else {
                interpolate(&self.from, &self.to, self.step as f64 / self.ratio as f64)
            };
        }
        self.since_feed = self.since_feed.saturating_add(1);
        UpsampleOutput { pose: self.current, stale: self.since_feed > self.stale_ticks }
    }

    pub fn current(&self) -> Pose6 {
        self.current
    }
}
