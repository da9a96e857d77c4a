use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::io::{PulseRow, WrenchRow};
use super::metrics::{error_metrics, ErrorReport};
use super::source::{read_trajectory_csv, synth_hand};
use super::{ClockMode, RunConfig, Scenario, SimError};
use crate::geom::{interpolate, Pose6, TimedSample, Twist};
use crate::haptic::HapticRenderer;
use crate::motion::{FollowerStage, LeaderStage, PacketChannel, TrajectoryPacket};
use crate::plant::{joint_rates, Plant, PulseFrame};
use crate::rsr::RsrGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineStats {
    /// Finite-difference extremes of the commanded follower pose at the
    /// follower rate.
    pub max_speed_mm_s: f64,
    pub max_angular_speed_deg_s: f64,
    pub max_accel_mm_s2: f64,
    pub max_angular_accel_deg_s2: f64,
    pub stale_ticks: u64,
    pub guard_ticks: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantStats {
    pub steps: [i64; 6],
    pub limit_hits: u64,
    pub overspeed_ticks: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelStats {
    pub packets: u64,
    pub dropped: u64,
    pub seq_gaps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HapticStats {
    pub frames: u64,
    pub violating_frames: u64,
    pub max_force_n: f64,
    pub max_torque_nm: f64,
    /// Wall-clock tick time; only measured on the real clock.
    pub p50_us: Option<f64>,
    pub p99_us: Option<f64>,
    pub budget_exceeded: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub clock: ClockMode,
    pub leader_ticks: u64,
    pub follower_ticks: u64,
    pub errors: ErrorReport,
    /// Input-to-follower delay: smoothing group delay plus the best-fit lag
    /// between the packet stream and the plant pose.
    pub delay_s: f64,
    pub smoothing_delay_s: f64,
    pub pipeline: PipelineStats,
    pub plant: PlantStats,
    pub channel: ChannelStats,
    pub haptic: HapticStats,
    pub exceeded: Vec<String>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.exceeded.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub packets: Vec<TrajectoryPacket>,
    /// Reference the follower should reproduce.
    pub desired: Vec<TimedSample>,
    /// Motion pipeline output, before actuation.
    pub commanded: Vec<TimedSample>,
    /// Plant pose from forward kinematics of the stepped joints.
    pub actual: Vec<TimedSample>,
    pub pulses: Vec<PulseRow>,
    pub wrenches: Vec<WrenchRow>,
    pub report: RunReport,
}

/// Follower loop body shared by the closed loop, packet replay and live
/// sessions: packet intake, motion pipeline, joint rates, pulses and plant.
pub(crate) struct FollowerSide {
    pub(crate) stage: FollowerStage,
    pub(crate) plant: Plant,
    geometry: RsrGeometry,
    dt: f64,
    rate: f64,
    decimation: u64,
    record: bool,
    pulse_log: bool,
    pub(crate) tick: u64,
    prev_pose: Pose6,
    prev_velocity: Option<(nalgebra::Vector3<f64>, nalgebra::Vector3<f64>)>,
    last_frame: Option<PulseFrame>,
    pub(crate) last_stale: bool,
    pub(crate) stats: PipelineStats,
    commanded: Vec<TimedSample>,
    actual: Vec<TimedSample>,
    pulses: Vec<PulseRow>,
}

impl FollowerSide {
    /// With `record` unset nothing is logged, so memory stays bounded.
    pub(crate) fn new(cfg: &RunConfig, initial: Pose6, geometry: &RsrGeometry, record: bool) -> Result<Self, SimError> {
        let dt = 1.0 / cfg.follower_rate_hz;
        let plant = Plant::new(initial, cfg.motors, geometry.clone()).map_err(|source| SimError::Plant { tick: 0, source })?;
        let mut side = Self {
            stage: FollowerStage::new(initial, &cfg.follower, cfg.scale, cfg.ratio(), dt),
            plant,
            geometry: geometry.clone(),
            dt,
            rate: cfg.follower_rate_hz,
            decimation: cfg.log_decimation as u64,
            record,
            pulse_log: cfg.pulse_log && record,
            tick: 0,
            prev_pose: initial,
            prev_velocity: None,
            last_frame: None,
            last_stale: false,
            stats: PipelineStats::default(),
            commanded: Vec::new(),
            actual: Vec::new(),
            pulses: Vec::new(),
        };
        side.log(initial);
        Ok(side)
    }

    /// Divides rather than multiplies so tick times land exactly on the
    /// leader grid.
    fn time(&self) -> f64 {
        self.tick as f64 / self.rate
    }

    fn log(&mut self, commanded: Pose6) {
        if self.record && self.tick % self.decimation == 0 {
            let t = self.time();
            self.commanded.push(TimedSample::new(t, commanded));
            self.actual.push(TimedSample::new(t, self.plant.pose()));
        }
    }

    pub(crate) fn step(&mut self, channel: &PacketChannel) -> Result<(), SimError> {
        while let Some(p) = channel.recv() {
            self.stage.receive(&p);
        }
        self.tick += 1;
        let out = self.stage.tick();
        self.last_stale = out.stale;
        if out.stale {
            self.stats.stale_ticks += 1;
        }
        let twist = Twist::between(&self.prev_pose, &out.pose, self.dt);
        let v = twist.v;
        let w = twist.w;
        self.stats.max_speed_mm_s = self.stats.max_speed_mm_s.max(v.norm());
        self.stats.max_angular_speed_deg_s = self.stats.max_angular_speed_deg_s.max(w.norm());
        if let Some((pv, pw)) = self.prev_velocity {
            self.stats.max_accel_mm_s2 = self.stats.max_accel_mm_s2.max((v - pv).norm() / self.dt);
            self.stats.max_angular_accel_deg_s2 = self.stats.max_angular_accel_deg_s2.max((w - pw).norm() / self.dt);
        }
        self.prev_velocity = Some((v, w));
        let tick = self.tick;
        let rates = joint_rates(&twist, &out.pose, &self.geometry).map_err(|source| SimError::Plant { tick, source })?;
        let (frame, _) = self.plant.step(&rates, self.dt).map_err(|source| SimError::Plant { tick, source })?;
        if self.pulse_log {
            for m in 0..6 {
                let changed = self.last_frame.is_none_or(|f| f.level[m] != frame.level[m] || f.dir[m] != frame.dir[m]);
                if changed {
                    self.pulses.push(PulseRow { tick, motor: m as u8, level: frame.level[m], dir: frame.dir[m] });
                }
            }
        }
        self.last_frame = Some(frame);
        self.prev_pose = out.pose;
        self.log(out.pose);
        Ok(())
    }

    fn plant_stats(&self) -> PlantStats {
        PlantStats {
            steps: self.plant.state().steps,
            limit_hits: self.plant.limit_hits(),
            overspeed_ticks: self.plant.overspeed_ticks(),
        }
    }
}

/// Leader loop body: source samples, leader stage, channel and haptics.
struct LeaderSide {
    stage: LeaderStage,
    renderer: Option<HapticRenderer>,
    rate: f64,
    last_virtual: Pose6,
    stats: HapticStats,
    guard_ticks: u64,
    packets: Vec<TrajectoryPacket>,
    wrenches: Vec<WrenchRow>,
    timings: Vec<f64>,
}

impl LeaderSide {
    fn new(cfg: &RunConfig, initial: Pose6, geometry: &RsrGeometry) -> Self {
        Self {
            stage: LeaderStage::new(initial, cfg.leader, cfg.scale, geometry.clone()),
            renderer: cfg.haptic_enabled.then(|| HapticRenderer::new(cfg.haptic, geometry.clone())),
            rate: cfg.leader_rate_hz,
            last_virtual: initial,
            stats: HapticStats::default(),
            guard_ticks: 0,
            packets: Vec::new(),
            wrenches: Vec::new(),
            timings: Vec::new(),
        }
    }

    fn step(&mut self, k: u64, sample: Option<Pose6>, channel: &PacketChannel) -> Result<(), SimError> {
        let t = k as f64 / self.rate;
        let mut twist = Twist::zero();
        if let Some(pose) = sample {
            let out = self.stage.step(&TimedSample::new(t, pose)).map_err(|source| SimError::Motion { tick: k, source })?;
            channel.send(out.packet);
            self.packets.push(out.packet);
            if out.guard_engaged {
                self.guard_ticks += 1;
            }
            twist = Twist::between(&self.last_virtual, &out.virtual_pose, 1.0 / self.rate);
            self.last_virtual = out.virtual_pose;
        }
        if let Some(r) = &mut self.renderer {
            let f = r.tick(&self.last_virtual, &twist);
            self.stats.frames += 1;
            self.stats.violating_frames += f.violating as u64;
            self.stats.max_force_n = self.stats.max_force_n.max(f.wrench.force.norm());
            self.stats.max_torque_nm = self.stats.max_torque_nm.max(f.wrench.torque.norm());
            self.stats.budget_exceeded += f.budget_exceeded as u64;
            self.timings.push(f.compute_us);
            self.wrenches.push(WrenchRow {
                tick: k,
                wrench: f.wrench.to_array(),
                violating: f.violating,
                outside_translation: f.outside_translation,
                outside_rotation: f.outside_rotation,
            });
        }
        Ok(())
    }
}

/// Source trajectory at the leader rate, as one optional sample per leader
/// tick, plus the reference the follower should reproduce.
fn leader_input(cfg: &RunConfig, home: &Pose6) -> Result<(Vec<Option<Pose6>>, Vec<TimedSample>), SimError> {
    let samples = match &cfg.scenario {
        Scenario::Sinusoid(s) => s.samples(cfg.leader_rate_hz, cfg.duration_s),
        Scenario::SynthHand(h) => synth_hand(cfg.seed, cfg.duration_s, h),
        Scenario::Replay { path } => {
            let f = std::fs::File::open(path).map_err(|e| SimError::io(path, e))?;
            read_trajectory_csv(std::io::BufReader::new(f))?
        }
        Scenario::Interactive => {
            return Err(SimError::Config("the interactive scenario runs under the server, not the simulator".into()))
        }
    };
    let Some(first) = samples.first().copied() else {
        return Err(SimError::EmptyTrajectory);
    };
    let ticks = samples.last().map(|s| ((s.t - first.t) * cfg.leader_rate_hz).round() as usize).unwrap_or(0);
    let mut per_tick = vec![None; ticks + 1];
    let mut desired = Vec::with_capacity(samples.len());
    for s in &samples {
        let k = ((s.t - first.t) * cfg.leader_rate_hz).round() as usize;
        per_tick[k] = Some(s.pose);
        // Unit-scale incremental mapping telescopes to this closed form.
        let p = home.p + (s.pose.p - first.pose.p);
        let q = s.pose.q * first.pose.q.inverse() * home.q;
        desired.push(TimedSample::new(s.t - first.t, Pose6::new(p, q)));
    }
    Ok((per_tick, desired))
}

fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let idx = ((sorted.len() - 1) as f64 * p).round() as usize;
    Some(sorted[idx])
}

/// Lag in seconds, searched on a 0.1 ms grid up to `max_lag`, that best aligns
/// `later` with `reference` (mean translation error plus mean rotation angle).
fn best_lag(reference: &[TimedSample], later: &[TimedSample], max_lag: f64) -> f64 {
    if reference.len() < 2 || later.is_empty() {
        return 0.0;
    }
    let cost = |lag: f64| -> f64 {
        let mut hint = 0;
        let mut sum = 0.0;
        let mut n = 0;
        for s in later {
            let t = s.t - lag;
            if t < reference[0].t || t > reference[reference.len() - 1].t {
                continue;
            }
            while hint + 1 < reference.len() && reference[hint + 1].t <= t {
                hint += 1;
            }
            let a = &reference[hint];
            let r = if hint + 1 < reference.len() {
                let b = &reference[hint + 1];
                interpolate(&a.pose, &b.pose, (t - a.t) / (b.t - a.t))
            } else {
                a.pose
            };
            sum += (r.p - s.pose.p).norm() + r.q.angle_to(&s.pose.q).to_degrees();
            n += 1;
        }
        if n == 0 { f64::INFINITY } else { sum / n as f64 }
    };
    let coarse = 1e-3;
    let mut best = (cost(0.0), 0.0);
    let steps = (max_lag / coarse).round() as usize;
    for i in 1..=steps {
        let lag = i as f64 * coarse;
        let c = cost(lag);
        if c < best.0 {
            best = (c, lag);
        }
    }
    let centre = best.1;
    for i in -10..=10 {
        let lag = centre + i as f64 * 1e-4;
        if lag < 0.0 {
            continue;
        }
        let c = cost(lag);
        if c < best.0 {
            best = (c, lag);
        }
    }
    best.1
}

fn check_thresholds(cfg: &RunConfig, report: &RunReport) -> Vec<String> {
    let th = &cfg.thresholds;
    let mut out = Vec::new();
    let mut check = |name: &str, limit: Option<f64>, value: f64| {
        if let Some(limit) = limit {
            if value > limit {
                out.push(format!("{name} {value} exceeds {limit}"));
            }
        }
    };
    check("max translation error (mm)", th.max_translation_mm, report.errors.max_translation_norm_mm);
    check("max rotation error (deg)", th.max_rotation_deg, report.errors.max_rotation_angle_deg);
    check("max speed (mm/s)", th.max_speed_mm_s, report.pipeline.max_speed_mm_s);
    check("max angular speed (deg/s)", th.max_angular_speed_deg_s, report.pipeline.max_angular_speed_deg_s);
    check("delay (s)", th.max_delay_s, report.delay_s);
    out
}

fn finish(
    cfg: &RunConfig,
    leader: LeaderSide,
    follower: FollowerSide,
    channel: &PacketChannel,
    desired: Vec<TimedSample>,
    leader_ticks: u64,
) -> Result<RunOutput, SimError> {
    let errors = error_metrics(&desired, &follower.actual)?;
    let packet_traj: Vec<TimedSample> = leader.packets.iter().map(|p| TimedSample::new(p.t, p.pose)).collect();
    let smoothing_delay_s = leader.stage.smoothing_delay_samples() / cfg.leader_rate_hz;
    let delay_s = smoothing_delay_s + best_lag(&packet_traj, &follower.actual, 0.5);
    let mut timings = leader.timings;
    let real = cfg.clock == ClockMode::Real;
    timings.sort_by(f64::total_cmp);
    let mut haptic = leader.stats;
    if real {
        haptic.p50_us = percentile(&timings, 0.5);
        haptic.p99_us = percentile(&timings, 0.99);
    } else {
        haptic.budget_exceeded = 0;
    }
    let mut pipeline = follower.stats;
    pipeline.guard_ticks = leader.guard_ticks;
    let mut report = RunReport {
        clock: cfg.clock,
        leader_ticks,
        follower_ticks: follower.tick,
        errors,
        delay_s,
        smoothing_delay_s,
        pipeline,
        plant: follower.plant_stats(),
        channel: ChannelStats {
            packets: leader.packets.len() as u64,
            dropped: channel.dropped(),
            seq_gaps: follower.stage.seq_gaps(),
        },
        haptic,
        exceeded: Vec::new(),
    };
    report.exceeded = check_thresholds(cfg, &report);
    Ok(RunOutput {
        packets: leader.packets,
        desired,
        commanded: follower.commanded,
        actual: follower.actual,
        pulses: follower.pulses,
        wrenches: leader.wrenches,
        report,
    })
}

/// Runs the full loop: source, leader stage, channel, follower pipeline,
/// joint rates, pulses and plant, then compares the plant pose with the
/// reference.
pub fn run_closed_loop(cfg: &RunConfig) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    let geometry = cfg.geometry()?;
    let home = geometry.home_pose();
    let (input, desired) = leader_input(cfg, &home)?;
    let channel = PacketChannel::new(cfg.channel_capacity);
    let mut leader = LeaderSide::new(cfg, home, &geometry);
    let mut follower = FollowerSide::new(cfg, home, &geometry, true)?;
    let ratio = cfg.ratio();
    let leader_ticks = input.len() as u64;
    match cfg.clock {
        ClockMode::Virtual => {
            for (k, sample) in input.iter().enumerate() {
                leader.step(k as u64, *sample, &channel)?;
                for _ in 0..ratio {
                    follower.step(&channel)?;
                }
            }
        }
        ClockMode::Real => {
            let start = Instant::now();
            let done = AtomicBool::new(false);
            let follower_ticks = leader_ticks * ratio as u64;
            let follower_dt = 1.0 / cfg.follower_rate_hz;
            let leader_dt = 1.0 / cfg.leader_rate_hz;
            let (lr, fr) = std::thread::scope(|scope| {
                let leader_ref = &mut leader;
                let follower_ref = &mut follower;
                let (channel_l, channel_f) = (channel.clone(), channel.clone());
                let done_ref = &done;
                let lh = scope.spawn(move || -> Result<(), SimError> {
                    for (k, sample) in input.iter().enumerate() {
                        wait_until(start, k as f64 * leader_dt);
                        let r = leader_ref.step(k as u64, *sample, &channel_l);
                        if r.is_err() {
                            done_ref.store(true, Ordering::Release);
                            return r;
                        }
                    }
                    Ok(())
                });
                let fh = scope.spawn(move || -> Result<(), SimError> {
                    for n in 0..follower_ticks {
                        if done_ref.load(Ordering::Acquire) {
                            break;
                        }
                        wait_until(start, n as f64 * follower_dt);
                        follower_ref.step(&channel_f)?;
                    }
                    Ok(())
                });
                (lh.join(), fh.join())
            });
            lr.map_err(|_| SimError::Config("leader loop panicked".into()))??;
            fr.map_err(|_| SimError::Config("follower loop panicked".into()))??;
        }
    }
    finish(cfg, leader, follower, &channel, desired, leader_ticks)
}

fn wait_until(start: Instant, t: f64) {
    let target = start + Duration::from_secs_f64(t);
    loop {
        let now = Instant::now();
        if now >= target {
            return;
        }
        let left = target - now;
        if left > Duration::from_micros(200) {
            std::thread::sleep(left - Duration::from_micros(100));
        } else {
            std::thread::yield_now();
        }
    }
}

/// Drives the follower side from a recorded packet log on the virtual clock.
/// The reference is the packet trajectory itself.
pub fn replay_packets(cfg: &RunConfig, packets: &[TrajectoryPacket]) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    let geometry = cfg.geometry()?;
    let Some(first) = packets.first() else {
        return Err(SimError::EmptyTrajectory);
    };
    let initial = first.pose;
    let channel = PacketChannel::new(cfg.channel_capacity);
    let mut follower = FollowerSide::new(cfg, initial, &geometry, true)?;
    let ratio = cfg.ratio() as u64;
    let t0 = first.t;
    let mut next = 0;
    let last_tick = ((packets[packets.len() - 1].t - t0) * cfg.leader_rate_hz).round() as u64;
    for k in 0..=last_tick {
        while next < packets.len() && ((packets[next].t - t0) * cfg.leader_rate_hz).round() as u64 <= k {
            channel.send(packets[next]);
            next += 1;
        }
        for _ in 0..ratio {
            follower.step(&channel)?;
        }
    }
    let desired: Vec<TimedSample> = packets.iter().map(|p| TimedSample::new(p.t - t0, p.pose)).collect();
    let errors = error_metrics(&desired, &follower.actual)?;
    let lag = best_lag(&desired, &follower.actual, 0.5);
    let mut pipeline = follower.stats;
    pipeline.guard_ticks = 0;
    let mut report = RunReport {
        clock: ClockMode::Virtual,
        leader_ticks: last_tick + 1,
        follower_ticks: follower.tick,
        errors,
        delay_s: lag,
        smoothing_delay_s: 0.0,
        pipeline,
        plant: follower.plant_stats(),
        channel: ChannelStats { packets: packets.len() as u64, dropped: channel.dropped(), seq_gaps: follower.stage.seq_gaps() },
        haptic: HapticStats::default(),
        exceeded: Vec::new(),
    };
    report.exceeded = check_thresholds(cfg, &report);
    Ok(RunOutput {
        packets: packets.to_vec(),
        desired,
        commanded: follower.commanded,
        actual: follower.actual,
        pulses: follower.pulses,
        wrenches: Vec::new(),
        report,
    })
}
