use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::{Vector3, Vector6};
use serde_json::json;
use teleop_core::geom::{Pose6, Twist};
use teleop_core::haptic::{HapticConfig, HapticRenderer, BUDGET_US};
use teleop_core::hc::{chain_position, solve_hc_ik, to_chain_frame, wrist_angles};
use teleop_core::motion::read_packets;
use teleop_core::rsr::{ray_exit, rsr_fk, rsr_ik, workspace_margin, JointVector};
use teleop_core::sim::{replay_packets, run_closed_loop, write_outputs, ClockMode, RunConfig, RunOutput, SimError};

use crate::{Cli, CliError, Clock, Command, Common, Device, EXIT_OK, EXIT_THRESHOLD};

/// Width of one latency histogram bucket, microseconds.
const HISTOGRAM_BUCKET_US: f64 = 10.0;

pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    match &cli.command {
        Command::Simulate { duration, clock } => simulate(&cli.common, *duration, *clock, out),
        Command::Replay { packets } => replay(&cli.common, packets, out),
        Command::Ik { pose, device, check } => ik(&cli.common, *pose, *device, *check, out),
        Command::Fk { joints, check } => fk(&cli.common, joints, *check, out),
        Command::BenchHaptic { points, ticks } => bench_haptic(&cli.common, *points, *ticks, out),
        Command::Serve { port, host, stream_hz } => {
            let cfg = load_config(&cli.common)?;
            crate::server::serve_blocking(cfg, host, *port, *stream_hz, Some(cli.common.output_dir.clone()))
                .map_err(|e| CliError::runtime(format!("server: {e}")))?;
            Ok(EXIT_OK)
        }
    }
}

/// Reads the configuration (or defaults) and applies the seed override.
pub fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| CliError::config(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Problems with the inputs a run reads are configuration errors; anything
/// failing inside the loop is a runtime error.
fn run_error(e: SimError) -> CliError {
    match e {
        SimError::Config(_) | SimError::Io { .. } | SimError::Format(_) => CliError::config(e.to_string()),
        other => CliError::runtime(other.to_string()),
    }
}

fn write_json(out: &mut dyn Write, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| CliError::runtime(format!("stdout: {e}")))
}

fn finish_run(cfg: &RunConfig, run: &RunOutput, dir: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    write_outputs(run, dir).map_err(|e| CliError::runtime(e.to_string()))?;
    let cfg_path = dir.join("config.json");
    let text = serde_json::to_string_pretty(cfg).map_err(|e| CliError::runtime(e.to_string()))?;
    std::fs::write(&cfg_path, text + "\n").map_err(|e| CliError::runtime(format!("{}: {e}", cfg_path.display())))?;
    let report = serde_json::to_value(&run.report).map_err(|e| CliError::runtime(e.to_string()))?;
    write_json(out, &json!({ "output_dir": dir, "passed": run.report.passed(), "report": report }))?;
    for line in &run.report.exceeded {
        eprintln!("threshold exceeded: {line}");
    }
    Ok(if run.report.passed() { EXIT_OK } else { EXIT_THRESHOLD })
}

fn simulate(common: &Common, duration: Option<f64>, clock: Option<Clock>, out: &mut dyn Write) -> Result<i32, CliError> {
    let mut cfg = load_config(common)?;
    if let Some(d) = duration {
        cfg.duration_s = d;
    }
    if let Some(c) = clock {
        cfg.clock = match c {
            Clock::Virtual => ClockMode::Virtual,
            Clock::Real => ClockMode::Real,
        };
    }
    cfg.validate().map_err(|e| CliError::config(e.to_string()))?;
    let run = run_closed_loop(&cfg).map_err(run_error)?;
    finish_run(&cfg, &run, &common.output_dir, out)
}

fn replay(common: &Common, path: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = load_config(common)?;
    let f = std::fs::File::open(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let packets = read_packets(BufReader::new(f)).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let run = replay_packets(&cfg, &packets).map_err(run_error)?;
    finish_run(&cfg, &run, &common.output_dir, out)
}

fn ik(common: &Common, pose: [f64; 6], device: Device, check: bool, out: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = load_config(common)?;
    let x = Pose6::from_array6(pose);
    match device {
        Device::Follower => {
            let g = cfg.geometry().map_err(|e| CliError::config(e.to_string()))?;
            let margins = workspace_margin(&x, &g);
            let sol = match rsr_ik(&x, &g) {
                Ok(sol) => sol,
                Err(e) => {
                    write_json(out, &json!({ "device": "follower", "pose": pose, "error": e.to_string(), "margins": margins }))?;
                    return Err(CliError::unreachable(e.to_string()));
                }
            };
            let mut value = json!({
                "device": "follower",
                "pose": pose,
                "joints": sol.joints,
                "admissible": sol.admissible,
                "margins": margins,
            });
            if check {
                let fk = rsr_fk(&sol.joints, &g.home_pose(), &g).map_err(|e| CliError::unreachable(e.to_string()))?;
                value["check"] = json!({
                    "translation_mm": (fk.pose.p - x.p).norm(),
                    "rotation_deg": fk.pose.q.angle_to(&x.q).to_degrees(),
                    "iterations": fk.iterations,
                });
            }
            write_json(out, &value)?;
            if check && !sol.admissible {
                return Err(CliError::unreachable("pose is outside the joint-limit workspace (see margins)"));
            }
            Ok(EXIT_OK)
        }
        Device::Leader => {
            let hc = &cfg.hc_geometry;
            let chains = solve_hc_ik(&x.p, hc).map_err(|e| CliError::unreachable(e.to_string()))?;
            let wrist = wrist_angles(&x.q, hc).map_err(|e| CliError::unreachable(e.to_string()))?;
            let mut value = json!({ "device": "leader", "pose": pose, "chains": chains, "wrist_deg": wrist });
            if check {
                let residual = (0..3)
                    .map(|i| (chain_position(&chains[i], hc) - to_chain_frame(&x.p, i, hc)).amax())
                    .fold(0.0, f64::max);
                value["check"] = json!({ "residual_mm": residual });
            }
            write_json(out, &value)?;
            Ok(EXIT_OK)
        }
    }
}

fn parse_joints(arg: &str) -> Result<JointVector, CliError> {
    if arg == "-" {
        let mut text = String::new();
        std::io::stdin().read_to_string(&mut text).map_err(|e| CliError::config(format!("stdin: {e}")))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::config(format!("stdin: {e}")))?;
        let joints = value.get("joints").cloned().unwrap_or(value);
        return serde_json::from_value(joints).map_err(|e| CliError::config(format!("stdin joints: {e}")));
    }
    crate::parse_six(arg).map(JointVector::from_array).map_err(|e| CliError::config(format!("--joints: {e}")))
}

fn fk(common: &Common, joints: &str, check: bool, out: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = load_config(common)?;
    let g = cfg.geometry().map_err(|e| CliError::config(e.to_string()))?;
    let q = parse_joints(joints)?;
    let sol = rsr_fk(&q, &g.home_pose(), &g).map_err(|e| CliError::unreachable(e.to_string()))?;
    let mut value = json!({
        "joints": q,
        "pose": sol.pose.to_array6(),
        "pose7": sol.pose.to_pose7(),
        "iterations": sol.iterations,
        "residual": sol.residual,
        "margins": workspace_margin(&sol.pose, &g),
    });
    if check {
        let back = rsr_ik(&sol.pose, &g).map_err(|e| CliError::unreachable(e.to_string()))?;
        let residual = back.joints.to_array().iter().zip(q.to_array()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        value["check"] = json!({ "joint_residual": residual, "admissible": back.admissible });
    }
    write_json(out, &value)?;
    Ok(EXIT_OK)
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

/// Tick times of a renderer sweeping a pose back and forth across the upper
/// stroke limit, so interior and violating frames are both timed.
pub fn time_haptic_ticks(cfg: &RunConfig, points: usize, ticks: usize) -> Result<Vec<f64>, CliError> {
    let haptic = HapticConfig { points, ..cfg.haptic };
    haptic.validate().map_err(CliError::config)?;
    let g = cfg.geometry().map_err(|e| CliError::config(e.to_string()))?;
    let home = g.home_pose();
    let exit = ray_exit(&home, &Vector6::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0), 300.0, 0.5, &g);
    let amplitude = exit + 2.0;
    let mut renderer = HapticRenderer::new(haptic, g);
    let mut prev = home;
    let mut times = Vec::with_capacity(ticks);
    for k in 0..ticks {
        let z = amplitude * (std::f64::consts::TAU * k as f64 / 2000.0).sin();
        let pose = home.translated(&Vector3::new(0.0, 0.0, z));
        let twist = Twist::between(&prev, &pose, 1e-3);
        prev = pose;
        let start = Instant::now();
        std::hint::black_box(renderer.tick(&pose, &twist));
        times.push(start.elapsed().as_secs_f64() * 1e6);
    }
    Ok(times)
}

fn bench_haptic(common: &Common, points: usize, ticks: usize, out: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = load_config(common)?;
    let mut times = time_haptic_ticks(&cfg, points, ticks)?;
    times.sort_by(f64::total_cmp);
    let dir = &common.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
    let path = dir.join("haptic_latency.csv");
    let mut csv = String::from("bucket_lo_us,bucket_hi_us,count\n");
    if let Some(max) = times.last() {
        let buckets = (max / HISTOGRAM_BUCKET_US).floor() as usize + 1;
        let mut counts = vec![0u64; buckets];
        for t in &times {
            counts[(t / HISTOGRAM_BUCKET_US).floor() as usize] += 1;
        }
        for (i, c) in counts.iter().enumerate().filter(|(_, c)| **c > 0) {
            let lo = i as f64 * HISTOGRAM_BUCKET_US;
            csv.push_str(&format!("{lo},{},{c}\n", lo + HISTOGRAM_BUCKET_US));
        }
    }
    std::fs::write(&path, csv).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    write_json(
        out,
        &json!({
            "points_per_cloud": points,
            "ticks": ticks,
            "p50_us": percentile(&times, 0.50),
            "p95_us": percentile(&times, 0.95),
            "p99_us": percentile(&times, 0.99),
            "max_us": times.last(),
            "budget_us": BUDGET_US,
            "over_budget": times.iter().filter(|t| **t > BUDGET_US).count(),
            "histogram": path,
        }),
    )?;
    Ok(EXIT_OK)
}
