//! Canonical trajectory store: one JSON object per line,
//! `{"traj","vessel_id","timestamp","lon","lat","sog","cog"}`.
//! `traj` is the zero-based trajectory index; lines of one trajectory are
//! contiguous and time-ordered.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ais::AisRecord;
use super::segment::Trajectory;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct StoreLine {
    traj: usize,
    vessel_id: String,
    timestamp: i64,
    lon: f64,
    lat: f64,
    sog: f64,
    cog: f64,
}

pub fn write_store<W: Write>(mut w: W, trajectories: &[Trajectory]) -> std::io::Result<()> {
    for (traj, t) in trajectories.iter().enumerate() {
        for r in &t.records {
            let line = StoreLine {
                traj,
                vessel_id: r.vessel_id.clone(),
                timestamp: r.timestamp,
                lon: r.lon,
                lat: r.lat,
                sog: r.sog,
                cog: r.cog,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()
}

pub fn save_store(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_store(BufWriter::new(f), trajectories).map_err(|e| Error::io(path, e))
}

pub fn read_store<R: BufRead>(r: R) -> Result<Vec<Trajectory>> {
    let mut out: Vec<Trajectory> = Vec::new();
    let mut current: Option<usize> = None;
    for (lineno, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Format {
            what: "trajectory store",
            detail: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let l: StoreLine = serde_json::from_str(&line).map_err(|e| Error::Format {
            what: "trajectory store",
            detail: format!("line {}: {e}", lineno + 1),
        })?;
        let rec = AisRecord {
            vessel_id: l.vessel_id,
            timestamp: l.timestamp,
            lon: l.lon,
            lat: l.lat,
            sog: l.sog,
            cog: l.cog,
        };
        if current != Some(l.traj) {
            current = Some(l.traj);
            out.push(Trajectory {
                vessel_id: rec.vessel_id.clone(),
                records: Vec::new(),
            });
        }
        out.last_mut().unwrap().records.push(rec);
    }
    Ok(out)
}

pub fn load_store(path: &Path) -> Result<Vec<Trajectory>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_store(BufReader::new(f))
}
