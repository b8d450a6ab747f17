use serde::{Deserialize, Serialize};

use super::ais::AisRecord;
use crate::error::{Error, Result};

/// A single vessel's track with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub vessel_id: String,
    pub records: Vec<AisRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.records.iter().map(AisRecord::position).collect()
    }

    pub fn timestamps(&self) -> Vec<i64> {
        self.records.iter().map(|r| r.timestamp).collect()
    }
}

/// Split sorted records into per-vessel trajectories.
///
/// A record closer than `min_interval` seconds to the last kept record is
/// dropped; a gap longer than `max_gap` closes the current trajectory.
pub fn segment_trajectories(
    records: &[AisRecord],
    min_interval: i64,
    max_gap: i64,
) -> Result<Vec<Trajectory>> {
    if min_interval >= max_gap {
        return Err(Error::Config(format!(
            "min_interval ({min_interval} s) must be smaller than max_gap ({max_gap} s)"
        )));
    }
    if min_interval < 0 {
        return Err(Error::Config("min_interval must be non-negative".into()));
    }

    let mut out: Vec<Trajectory> = Vec::new();
    let mut current: Option<Trajectory> = None;
    for rec in records {
        match current.as_mut() {
            Some(traj) if traj.vessel_id == rec.vessel_id => {
                let last = traj.records.last().expect("trajectory never empty");
                if rec.timestamp < last.timestamp {
                    return Err(Error::Precondition(
                        "records must be sorted by (vessel_id, timestamp)".into(),
                    ));
                }
                let gap = rec.timestamp - last.timestamp;
                // Zero gaps (duplicates) are thinned as well.
                if gap < min_interval.max(1) {
                    continue;
                }
                if gap > max_gap {
                    out.push(current.take().unwrap());
                    current = Some(Trajectory {
                        vessel_id: rec.vessel_id.clone(),
                        records: vec![rec.clone()],
                    });
                } else {
                    traj.records.push(rec.clone());
                }
            }
            _ => {
                if let Some(done) = current.take() {
                    out.push(done);
                }
                current = Some(Trajectory {
                    vessel_id: rec.vessel_id.clone(),
                    records: vec![rec.clone()],
                });
            }
        }
    }
    out.extend(current);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(times: &[i64]) -> Vec<AisRecord> {
        times
            .iter()
            .map(|&t| AisRecord {
                vessel_id: "1".into(),
                timestamp: t,
                lon: 0.0,
                lat: 0.0,
                sog: 0.0,
                cog: 0.0,
            })
            .collect()
    }

    fn times(t: &Trajectory) -> Vec<i64> {
        t.timestamps()
    }

    #[test]
    fn long_gap_splits() {
        let out = segment_trajectories(&recs(&[0, 180, 380, 7580]), 180, 3600).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(times(&out[0]), vec![0, 180, 380]);
        assert_eq!(times(&out[1]), vec![7580]);
    }

    /// Greedy thinning reference: walk forward keeping a record iff it is at
    /// least `min` seconds after the last kept one.
    fn greedy(ts: &[i64], min: i64) -> Vec<i64> {
        let mut kept: Vec<i64> = Vec::new();
        for &t in ts {
            if kept.last().is_none_or(|&l| t - l >= min) {
                kept.push(t);
            }
        }
        kept
    }

    #[test]
    fn short_gap_thinned_keeping_earlier() {
        let ts = [0, 60, 240];
        let out = segment_trajectories(&recs(&ts), 180, 3600).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(times(&out[0]), greedy(&ts, 180));
        assert_eq!(times(&out[0]), vec![0, 240]);
    }

    #[test]
    fn single_record() {
        let out = segment_trajectories(&recs(&[5]), 60, 600).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].len(), 1);
    }

    #[test]
    fn bad_interval_config() {
        assert!(segment_trajectories(&recs(&[0]), 600, 600).unwrap_err().is_config());
    }

    #[test]
    fn vessels_separated() {
        let mut r = recs(&[0, 200]);
        r[1].vessel_id = "2".into();
        let out = segment_trajectories(&r, 60, 600).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].vessel_id, "2");
    }
}
