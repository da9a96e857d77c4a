//! Operator entry points: simulations, packet replay, kinematics queries, the
//! haptic benchmark and the live session server.

pub mod commands;
pub mod server;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Run completed and every configured threshold held.
pub const EXIT_OK: i32 = 0;
/// Run completed but a configured threshold was exceeded.
pub const EXIT_THRESHOLD: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
/// Pose unreachable, outside the workspace or no kinematic convergence.
pub const EXIT_UNREACHABLE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "teleop", version, about = "Leader-follower teleoperation simulator and session server")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; defaults apply to omitted keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for every file the command writes.
    #[arg(long, global = true, default_value = "out")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Clock {
    Virtual,
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Device {
    /// Follower platform: pose to rotary angles and leg lengths.
    Follower,
    /// Leader device: position to chain angles, orientation to wrist angles.
    Leader,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Runs the closed loop and writes logs and the error report.
    Simulate {
        /// Overrides the configured duration, seconds.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, value_enum)]
        clock: Option<Clock>,
    },
    /// Drives the follower from a recorded packet log (JSONL).
    Replay {
        packets: PathBuf,
    },
    /// Inverse kinematics of a pose `x,y,z,alpha,beta,gamma` (mm, deg).
    Ik {
        #[arg(long, value_parser = parse_six, allow_hyphen_values = true)]
        pose: [f64; 6],
        #[arg(long, value_enum, default_value = "follower")]
        device: Device,
        /// Runs forward kinematics on the result and prints the residual.
        #[arg(long)]
        check: bool,
    },
    /// Forward kinematics of follower joints `th1,th2,th3,d1,d2,d3` (deg, mm),
    /// or `-` to read the JSON printed by `ik` from stdin.
    Fk {
        #[arg(long, allow_hyphen_values = true)]
        joints: String,
        /// Runs inverse kinematics on the result and prints the residual.
        #[arg(long)]
        check: bool,
    },
    /// Times haptic ticks and writes a latency histogram.
    BenchHaptic {
        /// Probe points per cloud.
        #[arg(long, default_value_t = 500)]
        points: usize,
        #[arg(long, default_value_t = 10_000)]
        ticks: usize,
    },
    /// Serves live sessions over WebSocket at `/ws`.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// State snapshots per second.
        #[arg(long, default_value_t = 60.0)]
        stream_hz: f64,
    },
}

fn parse_six(s: &str) -> Result<[f64; 6], String> {
    let values: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let arr: [f64; 6] = values.try_into().map_err(|v: Vec<f64>| format!("expected 6 comma-separated values, got {}", v.len()))?;
    if arr.iter().all(|v| v.is_finite()) {
        Ok(arr)
    } else {
        Err("values must be finite".into())
    }
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: EXIT_RUNTIME, message: message.into() }
    }

    pub fn unreachable(message: impl Into<String>) -> Self {
        Self { code: EXIT_UNREACHABLE, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match commands::dispatch(&cli, &mut stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
