//! Ground-truth kinematics from irregular position series, plus the
//! complexity/irregularity scores used to stratify evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Metres per degree of arc on the spherical Earth.
pub const METRES_PER_DEGREE: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

const IRREGULARITY_EPSILON: f64 = 1e-9;

/// Great-circle distance in metres between two `(lon, lat)` points in degrees.
pub fn haversine_m(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (lon1, lat1) = (a[0].to_radians(), a[1].to_radians());
    let (lon2, lat2) = (b[0].to_radians(), b[1].to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Point reached from `start` after travelling `distance_m` on the initial
/// bearing `bearing_deg` (clockwise from north) along a great circle.
pub fn destination_point(start: [f64; 2], bearing_deg: f64, distance_m: f64) -> [f64; 2] {
    let (lon1, lat1) = (start[0].to_radians(), start[1].to_radians());
    let theta = bearing_deg.to_radians();
    let delta = distance_m / EARTH_RADIUS_M;
    let lat2 = (lat1.sin() * delta.cos() + lat1.cos() * delta.sin() * theta.cos()).asin();
    let lon2 = lon1
        + (theta.sin() * delta.sin() * lat1.cos()).atan2(delta.cos() - lat1.sin() * lat2.sin());
    let lon2 = (lon2.to_degrees() + 540.0).rem_euclid(360.0) - 180.0;
    [lon2, lat2.to_degrees()]
}

fn check_increasing(timestamps: &[i64]) -> Result<()> {
    if timestamps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("timestamps must be strictly increasing".into()));
    }
    Ok(())
}

/// Speed in m/s between consecutive points.
pub fn velocity_series(positions: &[[f64; 2]], timestamps: &[i64]) -> Result<Vec<f64>> {
    if positions.len() != timestamps.len() {
        return Err(Error::Shape(format!(
            "{} positions vs {} timestamps",
            positions.len(),
            timestamps.len()
        )));
    }
    if positions.len() < 2 {
        return Err(Error::Precondition("velocity needs at least 2 points".into()));
    }
    check_increasing(timestamps)?;
    Ok(positions
        .windows(2)
        .zip(timestamps.windows(2))
        .map(|(g, t)| haversine_m(g[0], g[1]) / (t[1] - t[0]) as f64)
        .collect())
}

/// `a_i = (v_{i+1} − v_i) / (t_{i+2} − t_{i+1})`; `timestamps` are the point
/// timestamps the velocities were computed from (one more than velocities).
pub fn acceleration_series(velocity: &[f64], timestamps: &[i64]) -> Result<Vec<f64>> {
    if velocity.len() < 2 {
        return Err(Error::Precondition("acceleration needs at least 2 velocities".into()));
    }
    if timestamps.len() != velocity.len() + 1 {
        return Err(Error::Shape(format!(
            "{} velocities need {} timestamps, got {}",
            velocity.len(),
            velocity.len() + 1,
            timestamps.len()
        )));
    }
    check_increasing(timestamps)?;
    Ok(velocity
        .windows(2)
        .enumerate()
        .map(|(i, v)| (v[1] - v[0]) / (timestamps[i + 2] - timestamps[i + 1]) as f64)
        .collect())
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub(crate) fn pop_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Std of planar step lengths in (lon, lat) degree space.
pub fn spatial_complexity(positions: &[[f64; 2]]) -> Result<f64> {
    if positions.len() < 3 {
        return Err(Error::Precondition("spatial complexity needs at least 3 points".into()));
    }
    let steps: Vec<f64> = positions
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .collect();
    Ok(pop_std(&steps))
}

/// Relative change in interval spread from the input window to the
/// prediction window.
pub fn temporal_irregularity(input_intervals: &[f64], pred_intervals: &[f64]) -> f64 {
    let si = pop_std(input_intervals);
    let sp = pop_std(pred_intervals);
    (sp - si).abs() / (si + IRREGULARITY_EPSILON)
}

/// Splits `timestamps` at `split` into input/prediction interval lists and
/// scores them. Intervals straddling the split belong to the prediction part.
pub fn temporal_irregularity_of(timestamps: &[i64], split: usize) -> f64 {
    let iv: Vec<f64> = timestamps.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    let cut = split.saturating_sub(1).min(iv.len());
    temporal_irregularity(&iv[..cut], &iv[cut..])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StratificationLevel {
    Low,
    Medium,
    High,
}

impl StratificationLevel {
    pub const ALL: [StratificationLevel; 3] = [Self::Low, Self::Medium, Self::High];

    pub fn name(self) -> &'static str {
        match self {
            Self::Low => "Low",
            Self::Medium => "Medium",
            Self::High => "High",
        }
    }
}

/// Quantile by linear interpolation between order statistics
/// (position `q·(n−1)` in the sorted sample).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn quartile_levels(scores: &[f64]) -> Result<Vec<StratificationLevel>> {
    if scores.len() < 4 {
        return Err(Error::Precondition("quartile levels need at least 4 scores".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    Ok(scores
        .iter()
        .map(|&s| {
            if s > q3 {
                StratificationLevel::High
            } else if s < q1 {
                StratificationLevel::Low
            } else {
                StratificationLevel::Medium
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicProfile {
    pub velocity: Vec<f64>,
    pub acceleration: Vec<f64>,
    pub spatial_complexity: f64,
    pub temporal_irregularity: f64,
}

impl KinematicProfile {
    /// Profile of a full series; irregularity compares intervals before and
    /// after `split`.
    pub fn compute(positions: &[[f64; 2]], timestamps: &[i64], split: usize) -> Result<Self> {
        let velocity = velocity_series(positions, timestamps)?;
        let acceleration = acceleration_series(&velocity, timestamps)?;
        Ok(Self {
            velocity,
            acceleration,
            spatial_complexity: spatial_complexity(positions)?,
            temporal_irregularity: temporal_irregularity_of(timestamps, split),
        })
    }
}
