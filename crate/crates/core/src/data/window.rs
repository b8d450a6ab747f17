use serde::{Deserialize, Serialize};

use super::ais::AisRecord;
use super::segment::Trajectory;

/// One training instance: `h` history records and the next `p` positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub history: Vec<AisRecord>,
    pub future_positions: Vec<[f64; 2]>,
    pub future_timestamps: Vec<i64>,
}

impl TrajectorySample {
    pub fn h(&self) -> usize {
        self.history.len()
    }

    pub fn p(&self) -> usize {
        self.future_positions.len()
    }

    pub fn history_timestamps(&self) -> Vec<i64> {
        self.history.iter().map(|r| r.timestamp).collect()
    }

    pub fn history_positions(&self) -> Vec<[f64; 2]> {
        self.history.iter().map(AisRecord::position).collect()
    }

    /// History and future timestamps back to back.
    pub fn all_timestamps(&self) -> Vec<i64> {
        let mut t = self.history_timestamps();
        t.extend_from_slice(&self.future_timestamps);
        t
    }
}

/// `max(0, ⌊(len − h − p)/stride⌋ + 1)`.
pub fn window_count(len: usize, h: usize, p: usize, stride: usize) -> usize {
    if len < h + p || stride == 0 {
        0
    } else {
        (len - h - p) / stride + 1
    }
}

pub fn window_samples(
    traj: &Trajectory,
    h: usize,
    p: usize,
    stride: usize,
) -> Vec<TrajectorySample> {
    assert!(h >= 1 && p >= 1 && stride >= 1, "h, p and stride must be positive");
    let n = window_count(traj.len(), h, p, stride);
    (0..n)
        .map(|k| {
            let start = k * stride;
            let hist = &traj.records[start..start + h];
            let fut = &traj.records[start + h..start + h + p];
            TrajectorySample {
                history: hist.to_vec(),
                future_positions: fut.iter().map(AisRecord::position).collect(),
                future_timestamps: fut.iter().map(|r| r.timestamp).collect(),
            }
        })
        .collect()
}
