use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::run::RunOutput;
use super::source::TRAJECTORY_HEADER;
use super::SimError;
use crate::geom::TimedSample;
use crate::motion::write_packets;

/// One pulse-line change: logged on the first frame and whenever a motor's
/// level or direction bit changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PulseRow {
    pub tick: u64,
    pub motor: u8,
    pub level: bool,
    pub dir: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrenchRow {
    pub tick: u64,
    /// fx, fy, fz (N), tx, ty, tz (N·m).
    pub wrench: [f64; 6],
    pub violating: bool,
    pub outside_translation: usize,
    pub outside_rotation: usize,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, SimError> {
    let f = File::create(path).map_err(|e| SimError::io(path, e))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(BufWriter::new(f)))
}

fn csv_err(path: &Path, e: csv::Error) -> SimError {
    SimError::io(path, std::io::Error::other(e))
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), SimError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| SimError::io(path, e))
}

/// Writes a trajectory as `t_sec,x_mm,y_mm,z_mm,alpha_deg,beta_deg,gamma_deg`.
pub fn write_trajectory_csv(path: &Path, samples: &[TimedSample]) -> Result<(), SimError> {
    write_rows(
        path,
        &TRAJECTORY_HEADER,
        samples.iter().map(|s| std::iter::once(s.t).chain(s.pose.to_array6()).map(|v| v.to_string()).collect::<Vec<_>>()),
    )
}

/// Writes every log of a run into `dir`: packets.jsonl, desired.csv,
/// commanded.csv, actual.csv, error_series.csv, pulses.csv (if logged),
/// wrench.csv (if rendered) and report.json.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<(), SimError> {
    std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    let path = dir.join("packets.jsonl");
    let f = File::create(&path).map_err(|e| SimError::io(&path, e))?;
    let mut w = BufWriter::new(f);
    write_packets(&mut w, &out.packets).and_then(|_| w.flush()).map_err(|e| SimError::io(&path, e))?;

    write_trajectory_csv(&dir.join("desired.csv"), &out.desired)?;
    write_trajectory_csv(&dir.join("commanded.csv"), &out.commanded)?;
    write_trajectory_csv(&dir.join("actual.csv"), &out.actual)?;
    write_rows(
        &dir.join("error_series.csv"),
        &["t_sec", "ex_mm", "ey_mm", "ez_mm", "ealpha_deg", "ebeta_deg", "egamma_deg"],
        out.report.errors.series.iter().map(|e| {
            std::iter::once(e.t).chain(e.translation).chain(e.rotation).map(|v| v.to_string()).collect::<Vec<_>>()
        }),
    )?;
    if !out.pulses.is_empty() {
        write_rows(
            &dir.join("pulses.csv"),
            &["tick", "motor", "level", "dir"],
            out.pulses.iter().map(|p| {
                vec![p.tick.to_string(), p.motor.to_string(), (p.level as u8).to_string(), (p.dir as u8).to_string()]
            }),
        )?;
    }
    if !out.wrenches.is_empty() {
        write_rows(
            &dir.join("wrench.csv"),
            &["tick", "fx_n", "fy_n", "fz_n", "tx_nm", "ty_nm", "tz_nm", "violating", "outside_translation", "outside_rotation"],
            out.wrenches.iter().map(|r| {
                let mut row = vec![r.tick.to_string()];
                row.extend(r.wrench.iter().map(|v| v.to_string()));
                row.push((r.violating as u8).to_string());
                row.push(r.outside_translation.to_string());
                row.push(r.outside_rotation.to_string());
                row
            }),
        )?;
    }
    let path = dir.join("report.json");
    let text = serde_json::to_string_pretty(&out.report).map_err(|e| SimError::io(&path, std::io::Error::other(e)))?;
    std::fs::write(&path, text + "\n").map_err(|e| SimError::io(&path, e))
}
