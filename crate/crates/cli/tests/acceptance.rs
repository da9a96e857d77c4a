//! Acceptance checks. Prints one PASS or FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::{Matrix6, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use teleop_core::geom::{Pose6, Twist, Wrench};
use teleop_core::haptic::{
    build_clouds, constraint_gradients, evaluate_violation, render_wrench, HapticConfig, HapticRenderer, WrenchFilter,
};
use teleop_core::hc::{solve_hc_ik, to_chain_frame, HcGeometry};
use teleop_core::motion::{gui_trajectory, ScaleConfig};
use teleop_core::plant::{MotorConfig, PulseGenerator};
use teleop_core::rsr::{ray_exit, rsr_fk, rsr_ik, rsr_jacobian, sample_admissible_pose, workspace_margin, RsrGeometry};
use teleop_core::sim::{run_closed_loop, RunConfig, RunOutput};

type Check = fn() -> Result<String, String>;

const F_MAX: f64 = 15.0;
const TAU_MAX: f64 = 0.3;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("closed-loop sinusoid tracking", sinusoid_tracking),
        ("velocity cap", velocity_cap),
        ("continuity through breakage", breakage_continuity),
        ("pulse fidelity", pulse_fidelity),
        ("kinematics oracles", kinematics_oracles),
        ("haptic correctness", haptic_correctness),
        ("haptic budget", haptic_budget),
        ("gui trajectory exactness", gui_trajectory_exactness),
        ("determinism", determinism),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {}. {name} ({secs:.1} s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name} ({secs:.1} s): {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn bundled(name: &str) -> RunConfig {
    RunConfig::load(&configs_dir().join(name)).expect("bundled config")
}

fn teleop(args: &[&str]) -> Result<(i32, Value), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_teleop")).args(args).output().map_err(|e| e.to_string())?;
    let code = out.status.code().unwrap_or(-1);
    let value = serde_json::from_slice(&out.stdout)
        .map_err(|e| format!("exit {code}, stdout not JSON ({e}): {}", String::from_utf8_lossy(&out.stderr)))?;
    Ok((code, value))
}

fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

fn sinusoid_tracking() -> Result<String, String> {
    let dir = tempdir();
    let cfg = configs_dir().join("sinusoid-6dof.json");
    let start = Instant::now();
    let (code, v) = teleop(&["simulate", "--config", cfg.to_str().unwrap(), "--output-dir", dir.path().to_str().unwrap()])?;
    let secs = start.elapsed().as_secs_f64();
    let e = &v["report"]["errors"];
    let trans = e["max_translation_norm_mm"].as_f64().ok_or("no translation error")?;
    let rot = e["max_rotation_angle_deg"].as_f64().ok_or("no rotation error")?;
    let duration = bundled("sinusoid-6dof.json").duration_s;
    let detail = format!("{duration} s run, max {trans:.4} mm / {rot:.4} deg, runtime {secs:.1} s");
    ensure!(code == 0, "exit {code}; {detail}");
    ensure!(trans <= 0.25 && rot <= 0.15, "bounds exceeded; {detail}");
    ensure!(secs < 60.0, "too slow; {detail}");
    Ok(detail)
}

/// Largest finite-difference speeds of the commanded log.
fn commanded_speeds(out: &RunOutput) -> (f64, f64) {
    out.commanded.windows(2).fold((0.0f64, 0.0f64), |(v, w), pair| {
        let dt = pair[1].t - pair[0].t;
        (
            v.max((pair[1].pose.p - pair[0].pose.p).norm() / dt),
            w.max(pair[1].pose.q.angle_to(&pair[0].pose.q).to_degrees() / dt),
        )
    })
}

fn velocity_cap() -> Result<String, String> {
    let mut details = Vec::new();
    for scale in [ScaleConfig::demo(), ScaleConfig::default()] {
        let cfg = RunConfig { scale, ..bundled("fast-hand.json") };
        let out = run_closed_loop(&cfg).map_err(|e| e.to_string())?;
        let p = &out.report.pipeline;
        let (v_log, w_log) = commanded_speeds(&out);
        let v = p.max_speed_mm_s.max(v_log);
        let w = p.max_angular_speed_deg_s.max(w_log);
        ensure!(v <= scale.max_v + 1e-6, "max_v {}: speed {v}", scale.max_v);
        ensure!(w <= scale.max_w + 1e-6, "max_w {}: angular speed {w}", scale.max_w);
        ensure!(v > 0.9 * scale.max_v, "max_v {}: cap never reached ({v})", scale.max_v);
        details.push(format!("{v:.6} <= {} mm/s, {w:.6} <= {} deg/s", scale.max_v, scale.max_w));
    }
    Ok(details.join("; "))
}

fn breakage_continuity() -> Result<String, String> {
    let cfg = bundled("breakage.json");
    let out = run_closed_loop(&cfg).map_err(|e| e.to_string())?;
    let r = &out.report;
    let a_max = cfg.follower.limiter.a_max;
    ensure!(r.pipeline.max_accel_mm_s2 <= a_max * (1.0 + 1e-9), "acceleration {} > {a_max}", r.pipeline.max_accel_mm_s2);
    let mut worst_jump = 0.0f64;
    for w in out.commanded.windows(2) {
        let dt = w[1].t - w[0].t;
        worst_jump = worst_jump.max((w[1].pose.p - w[0].pose.p).norm() / (cfg.scale.max_v * dt));
    }
    ensure!(worst_jump <= 1.0 + 1e-6, "position jump of {worst_jump} times the speed cap");
    ensure!(r.delay_s < 0.5, "delay {} s", r.delay_s);
    Ok(format!(
        "max accel {:.3} <= {a_max} mm/s^2, largest step {:.4} of the cap, delay {:.1} ms",
        r.pipeline.max_accel_mm_s2,
        worst_jump,
        r.delay_s * 1e3
    ))
}

fn pulse_fidelity() -> Result<String, String> {
    let dt = 1e-4;
    let ticks = 20_000;
    let m = MotorConfig::default();
    let mut segments = 0;
    let mut worst = 0.0f64;
    for motor in 0..6 {
        // Fastest rate stays below half a step per tick.
        let top = 0.4 * m.step_size(motor) / dt;
        for decade in [1e-3, 1e-2, 1e-1, 1.0] {
            for sign in [1.0, -1.0] {
                let rate = sign * top * decade;
                let mut g = PulseGenerator::new();
                let mut prev = g.level();
                let mut edges = 0u64;
                for _ in 0..ticks {
                    let out = g.step(rate, dt, m.gain(motor));
                    ensure!(out.dir == (rate > 0.0), "motor {motor} rate {rate}: direction bit wrong");
                    if out.level && !prev {
                        edges += 1;
                    }
                    prev = out.level;
                }
                let analytic = m.gain(motor) * rate.abs() * ticks as f64 * dt / std::f64::consts::TAU;
                let off = (edges as f64 - analytic).abs();
                ensure!(off <= 1.0 + 1e-9, "motor {motor} rate {rate}: {edges} edges vs {analytic}");
                worst = worst.max(off);
                segments += 1;
            }
        }
    }
    Ok(format!("{segments} segments, worst edge count off by {worst:.3}, direction bit always right"))
}

/// Central differences of the inverse kinematics.
fn fd_jacobian(x: &Pose6, g: &RsrGeometry) -> Matrix6<f64> {
    let h = 1e-6;
    let mut j = Matrix6::zeros();
    for k in 0..6 {
        let mut e = Vector3::zeros();
        e[k % 3] = h;
        let (plus, minus) = if k < 3 { (x.translated(&e), x.translated(&-e)) } else { (x.rotated(&e), x.rotated(&-e)) };
        let qp = rsr_ik(&plus, g).unwrap().joints.to_array();
        let qm = rsr_ik(&minus, g).unwrap().joints.to_array();
        for r in 0..6 {
            j[(r, k)] = (qp[r] - qm[r]) / (2.0 * h);
        }
    }
    j
}

/// Chain equations of the leader device, written out independently.
fn chain_equations(th: [f64; 3], g: &HcGeometry) -> [f64; 3] {
    let [t1, t2, t3] = th.map(f64::to_radians);
    [
        g.a * t1.cos() - g.c + g.b * t3.sin() * t2.cos(),
        g.b * t3.cos() - g.f,
        g.a * t1.sin() + g.b * t3.sin() * t2.sin(),
    ]
}

fn kinematics_oracles() -> Result<String, String> {
    let g = RsrGeometry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut worst_roundtrip = 0.0f64;
    for _ in 0..1000 {
        let x = sample_admissible_pose(&mut rng, &g, 40.0, 10.0);
        let q = rsr_ik(&x, &g).map_err(|e| e.to_string())?.joints;
        let guess = x.translated(&Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5)));
        let fk = rsr_fk(&q, &guess, &g).map_err(|e| e.to_string())?.pose;
        worst_roundtrip = worst_roundtrip.max((fk.p - x.p).norm()).max(fk.q.angle_to(&x.q).to_degrees());
    }
    ensure!(worst_roundtrip <= 1e-9, "IK/FK roundtrip error {worst_roundtrip}");

    let mut worst_jac = 0.0f64;
    for _ in 0..100 {
        let x = sample_admissible_pose(&mut rng, &g, 40.0, 10.0);
        let j = rsr_jacobian(&x, &g).map_err(|e| e.to_string())?;
        let fd = fd_jacobian(&x, &g);
        worst_jac = worst_jac.max((j.j - fd).amax() / fd.amax());
    }
    ensure!(worst_jac <= 1e-6, "Jacobian relative error {worst_jac}");

    let hc = HcGeometry::default();
    let reachable: Vec<Vector3<f64>> = std::iter::repeat_with(|| Vector3::from_fn(|_, _| rng.random_range(-330.0..330.0)))
        .take(200_000)
        .filter(|p| solve_hc_ik(p, &hc).is_ok())
        .take(200)
        .collect();
    ensure!(reachable.len() == 200, "leader workspace not found");
    let centre = reachable.iter().sum::<Vector3<f64>>() / reachable.len() as f64;
    let (mut solved, mut tried, mut worst_hc) = (0, 0, 0.0f64);
    while solved < 1000 {
        tried += 1;
        ensure!(tried < 200_000, "only {solved} reachable leader targets");
        let p = centre + Vector3::from_fn(|_, _| rng.random_range(-80.0..80.0));
        let Ok(chains) = solve_hc_ik(&p, &hc) else { continue };
        solved += 1;
        for (i, a) in chains.iter().enumerate() {
            ensure!(a.th3 > 0.0 && a.th1 > 0.0 && a.th1 < 90.0, "branch violated at {p:?}: {a:?}");
            let pc = to_chain_frame(&p, i, &hc);
            let f = chain_equations([a.th1, a.th2, a.th3], &hc);
            for k in 0..3 {
                worst_hc = worst_hc.max((f[k] - pc[k]).abs());
            }
        }
    }
    ensure!(worst_hc <= 1e-9, "leader back-substitution residual {worst_hc} mm");
    Ok(format!("roundtrip {worst_roundtrip:.1e}, Jacobian {worst_jac:.1e} relative, leader residual {worst_hc:.1e} mm"))
}

fn raw_force(pose: &Pose6, cfg: &HapticConfig, g: &RsrGeometry) -> Wrench {
    let m = evaluate_violation(&build_clouds(pose, cfg), g, false);
    render_wrench(&m, &constraint_gradients(pose, g, cfg.gradient_step), &Twist::zero(), cfg).0
}

fn random_dir(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize()
}

fn haptic_correctness() -> Result<String, String> {
    let g = RsrGeometry::default();
    let cfg = HapticConfig::default();
    let home = g.home_pose();
    let mut rng = ChaCha8Rng::seed_from_u64(600);

    let mut interior = 0;
    while interior < 200 {
        let x = sample_admissible_pose(&mut rng, &g, 40.0, 8.0);
        if workspace_margin(&x, &g).iter().any(|m| *m <= 5.0) {
            continue;
        }
        let mut r = HapticRenderer::new(cfg, g.clone());
        for _ in 0..6 {
            let f = r.tick(&x, &Twist::zero());
            ensure!(!f.violating && f.wrench == Wrench::zero(), "nonzero wrench inside at {x:?}");
        }
        interior += 1;
    }

    let ray_cfg = HapticConfig { points: 200, ..cfg };
    for _ in 0..20 {
        let dir = random_dir(&mut rng);
        let exit = ray_exit(&home, &Vector6::new(dir.x, dir.y, dir.z, 0.0, 0.0, 0.0), 300.0, 0.5, &g);
        let mut prev = 0.0;
        for k in 0..=120 {
            let s = exit - 3.0 + 0.05 * k as f64;
            let f = raw_force(&home.translated(&(dir * s)), &ray_cfg, &g).force.norm();
            ensure!(f + 1e-9 >= prev, "force fell from {prev} to {f} along {dir:?}");
            prev = f;
        }
        ensure!(prev > 0.0, "no force past the boundary along {dir:?}");
    }

    let mut r = HapticRenderer::new(HapticConfig { points: 100, ..cfg }, g.clone());
    let (mut f_peak, mut t_peak) = (0.0f64, 0.0f64);
    for _ in 0..3000 {
        let v = Vector6::from_fn(|k, _| if k < 3 { rng.random_range(-120.0..120.0) } else { rng.random_range(-40.0..40.0) });
        let x = home.translated(&Vector3::new(v[0], v[1], v[2])).rotated(&Vector3::new(v[3], v[4], v[5]));
        let twist = Twist::new(Vector3::from_fn(|_, _| rng.random_range(-1e4..1e4)), Vector3::from_fn(|_, _| rng.random_range(-1e3..1e3)));
        let f = r.tick(&x, &twist);
        f_peak = f_peak.max(f.wrench.force.norm()).max(f.raw.force.norm());
        t_peak = t_peak.max(f.wrench.torque.norm()).max(f.raw.torque.norm());
    }
    ensure!(f_peak <= F_MAX && t_peak <= TAU_MAX, "caps exceeded: {f_peak} N, {t_peak} N m");

    let mut worst_angle = 0.0f64;
    let (mut checked, mut attempts) = (0, 0);
    while checked < 20 {
        attempts += 1;
        ensure!(attempts < 5000, "too few single-constraint poses");
        let dir = random_dir(&mut rng);
        let exit = ray_exit(&home, &Vector6::new(dir.x, dir.y, dir.z, 0.0, 0.0, 0.0), 300.0, 0.5, &g);
        let x = home.translated(&(dir * (exit + 1.0)));
        let m = evaluate_violation(&build_clouds(&x, &cfg), &g, false);
        let violated: BTreeSet<usize> =
            m.translation.iter().chain(m.rotation.iter()).flat_map(|pm| (0..9).filter(move |c| pm[*c] < 0.0)).collect();
        let Some(&c) = violated.first() else { continue };
        if violated.len() != 1 || c % 3 == 2 {
            continue;
        }
        let h = 1e-4;
        let grad = Vector3::from_fn(|k, _| {
            let mut e = Vector3::zeros();
            e[k] = h;
            (workspace_margin(&x.translated(&e), &g)[c] - workspace_margin(&x.translated(&-e), &g)[c]) / (2.0 * h)
        });
        worst_angle = worst_angle.max(raw_force(&x, &cfg, &g).force.angle(&grad).to_degrees());
        checked += 1;
    }
    ensure!(worst_angle < 2.0, "force off the inward gradient by {worst_angle} deg");

    let mut filter = WrenchFilter::new(&cfg);
    let inputs: Vec<Wrench> = (0..200)
        .map(|_| Wrench::new(Vector3::from_fn(|_, _| rng.random_range(-10.0..10.0)), Vector3::from_fn(|_, _| rng.random_range(-0.2..0.2))))
        .collect();
    for n in 0..inputs.len() {
        let got = filter.push(inputs[n]);
        let mut want = Wrench::zero();
        for k in 0..5 {
            let w = (k + 1) as f64 / 15.0;
            if let Some(x) = (n + k).checked_sub(4).map(|i| inputs[i]) {
                want.force += x.force * w;
                want.torque += x.torque * w;
            }
        }
        ensure!(got == want, "filter output {n} differs from the convolution");
    }
    Ok(format!(
        "{interior} interior poses silent, 20 rays monotone, peaks {f_peak:.3} N / {t_peak:.4} N m, gradient within {worst_angle:.3} deg, filter exact"
    ))
}

fn haptic_budget() -> Result<String, String> {
    let dir = tempdir();
    let (code, v) = teleop(&["bench-haptic", "--points", "500", "--ticks", "10000", "--output-dir", dir.path().to_str().unwrap()])?;
    ensure!(code == 0, "exit {code}");
    let p50 = v["p50_us"].as_f64().ok_or("no p50")?;
    let p99 = v["p99_us"].as_f64().ok_or("no p99")?;
    let detail = format!("2x500 points over 10000 ticks: p50 {p50:.1} us, p99 {p99:.1} us");
    ensure!(p50 < 1000.0 && p99 < 2000.0, "{detail}");
    Ok(detail)
}

fn gui_trajectory_exactness() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(800);
    let mut worst = 0.0f64;
    let n = 100_000;
    for _ in 0..n {
        let x0 = rng.random_range(-500.0..500.0);
        let dx = rng.random_range(-200.0..200.0);
        let t0 = rng.random_range(-10.0..10.0);
        let dt = rng.random_range(1e-3..20.0);
        let at = |t: f64| gui_trajectory(x0, dx, t0, dt, t).map_err(|e| e.to_string());
        // Rounding of the sample times alone moves the value by about one
        // ulp of the inputs, so the tolerance scales with them.
        let tol = 1e-12 * (1.0 + x0.abs() + dx.abs());
        for (t, want) in [(t0, x0), (t0 + dt, x0 + dx), (t0 + 0.5 * dt, x0 + 0.5 * dx)] {
            let err = (at(t)? - want).abs();
            ensure!(err <= tol, "x0 {x0}, dx {dx}, t0 {t0}, dt {dt}: error {err} at t {t}");
            worst = worst.max(err / (1.0 + x0.abs() + dx.abs()));
        }
        ensure!(at(t0 - 1.0)? == x0 && at(t0 + dt + 1.0)? == x0 + dx, "not held outside the move");
    }
    Ok(format!("{n} random moves, worst scaled error {worst:.1e}"))
}

fn determinism() -> Result<String, String> {
    let tmp = tempdir();
    let mut compared = 0;
    for (name, seed) in [("sinusoid-6dof.json", "1"), ("fast-hand.json", "3"), ("breakage.json", "11"), ("breakage.json", "2024")] {
        let cfg = configs_dir().join(name);
        let dirs = [tmp.path().join(format!("{name}-{seed}-a")), tmp.path().join(format!("{name}-{seed}-b"))];
        for dir in &dirs {
            let args = ["simulate", "--config", cfg.to_str().unwrap(), "--seed", seed, "--duration", "3", "--output-dir", dir.to_str().unwrap()];
            let (code, _) = teleop(&args)?;
            ensure!(code == 0, "{name} seed {seed}: exit {code}");
        }
        for entry in std::fs::read_dir(&dirs[0]).map_err(|e| e.to_string())? {
            let file = entry.map_err(|e| e.to_string())?.file_name();
            let a = std::fs::read(dirs[0].join(&file)).map_err(|e| e.to_string())?;
            let b = std::fs::read(dirs[1].join(&file)).map_err(|e| format!("{file:?}: {e}"))?;
            ensure!(a == b, "{name} seed {seed}: {file:?} differs");
            compared += 1;
        }
    }
    Ok(format!("4 seeded runs repeated, {compared} log files byte-identical"))
}
