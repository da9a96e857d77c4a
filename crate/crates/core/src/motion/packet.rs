use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::geom::Pose6;

/// One leader-to-follower sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryPacket {
    pub seq: u64,
    /// Leader clock, seconds.
    pub t: f64,
    /// Commanded follower pose as `[x, y, z, qw, qx, qy, qz]`.
    pub pose: Pose6,
    /// Applied `(s_v, s_w)`.
    pub scale: [f64; 2],
}

/// Writes packets as JSON lines.
pub fn write_packets<W: Write>(mut w: W, packets: &[TrajectoryPacket]) -> std::io::Result<()> {
    for p in packets {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads JSON-lines packets, skipping blank lines.
pub fn read_packets<R: BufRead>(r: R) -> Result<Vec<TrajectoryPacket>, std::io::Error> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("packet line {}: {e}", n + 1))
        })?;
        out.push(p);
    }
    Ok(out)
}
