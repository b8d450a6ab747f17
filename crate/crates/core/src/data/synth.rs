//! Seeded synthetic vessel tracks for tests and desk-scale experiments.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ais::AisRecord;
use super::segment::Trajectory;
use crate::error::{Error, Result};
use crate::kinematics::{destination_point, haversine_m, METRES_PER_DEGREE};

const KNOTS_PER_MPS: f64 = 1.943_844_492_440_604_7;
const EPOCH_BASE: i64 = 1_703_462_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Constant speed along a meridian or a parallel, so positions are
    /// linear in time both in degrees and in metres.
    Straight,
    /// Closed circuit, one revolution over the nominal duration.
    Loop,
    /// Alternating legs with changing heading and speed.
    Zigzag,
    /// Alternating stretches of straight travel, steady turns and weaving,
    /// each with its own speed.
    Mixed,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "straight" => Ok(Self::Straight),
            "loop" => Ok(Self::Loop),
            "zigzag" => Ok(Self::Zigzag),
            "mixed" => Ok(Self::Mixed),
            other => Err(Error::Config(format!("unknown trajectory kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalModel {
    Regular { delta: i64 },
    /// Gaussian jitter around `delta`, floored at `delta / 4` (and 1 s).
    Jittered { delta: i64, sigma: f64 },
    /// Clusters of short reports separated by occasional long silences.
    Bursty { delta: i64 },
}

impl IntervalModel {
    pub fn nominal(&self) -> i64 {
        match *self {
            Self::Regular { delta } | Self::Jittered { delta, .. } | Self::Bursty { delta } => {
                delta
            }
        }
    }

    /// Parses `regular:60`, `jittered:60:15` or `bursty:60`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let int = |i: usize| -> Result<i64> {
            parts
                .get(i)
                .and_then(|v| v.parse::<i64>().ok())
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::Config(format!("bad interval model `{s}`")))
        };
        match parts[0] {
            "regular" => Ok(Self::Regular { delta: int(1)? }),
            "bursty" => Ok(Self::Bursty { delta: int(1)? }),
            "jittered" => {
                let sigma = parts
                    .get(2)
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| *v >= 0.0)
                    .ok_or_else(|| Error::Config(format!("bad interval model `{s}`")))?;
                Ok(Self::Jittered {
                    delta: int(1)?,
                    sigma,
                })
            }
            _ => Err(Error::Config(format!("unknown interval model `{s}`"))),
        }
    }

    fn timestamps(&self, n: usize, t0: i64, rng: &mut ChaCha8Rng) -> Vec<i64> {
        let mut t = Vec::with_capacity(n);
        t.push(t0);
        for _ in 1..n {
            let step = match *self {
                Self::Regular { delta } => delta,
                Self::Jittered { delta, sigma } => {
                    let jitter = Normal::new(0.0, sigma.max(1e-12)).unwrap().sample(rng);
                    ((delta as f64 + jitter).round() as i64).max((delta / 4).max(1))
                }
                Self::Bursty { delta } => {
                    if rng.random_bool(0.15) {
                        rng.random_range(3 * delta..=6 * delta)
                    } else {
                        rng.random_range((delta / 2).max(1)..=delta)
                    }
                }
            };
            t.push(t.last().unwrap() + step);
        }
        t
    }
}

/// One stretch of a `mixed` track: straight, steadily turning, or weaving
/// around a base heading. Headings are continuous across stretches.
#[derive(Debug, Clone, Copy)]
struct Regime {
    start: f64,
    heading: f64,
    /// Degrees per second.
    turn_rate: f64,
    weave_amp: f64,
    weave_period: f64,
    speed: f64,
}

impl Regime {
    fn heading_at(&self, tau: f64) -> f64 {
        let dt = tau - self.start;
        let weave = if self.weave_amp > 0.0 {
            self.weave_amp * (2.0 * PI * dt / self.weave_period).sin()
        } else {
            0.0
        };
        self.heading + self.turn_rate * dt + weave
    }
}

fn mixed_regimes(rng: &mut ChaCha8Rng, heading0: f64, speed0: f64, nominal: f64, end: f64) -> Vec<Regime> {
    let mut out: Vec<Regime> = Vec::new();
    let mut start = 0.0;
    let mut heading = heading0;
    while start <= end {
        let speed = speed0 * rng.random_range(0.7..1.3);
        let (turn_rate, weave_amp, weave_period) = match rng.random_range(0..10) {
            0..=1 => (0.0, 0.0, 1.0),
            2..=6 => {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                (sign * rng.random_range(0.5..3.0) / nominal, 0.0, 1.0)
            }
            _ => (0.0, rng.random_range(10.0..30.0), rng.random_range(8.0..16.0) * nominal),
        };
        let r = Regime {
            start,
            heading,
            turn_rate,
            weave_amp,
            weave_period,
            speed,
        };
        let length = rng.random_range(150.0..400.0) * nominal;
        heading = r.heading_at(start + length);
        start += length;
        out.push(r);
    }
    out
}

/// Initial bearing in degrees `[0, 360)` from `a` to `b`.
fn bearing_deg(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (lon1, lat1) = (a[0].to_radians(), a[1].to_radians());
    let (lon2, lat2) = (b[0].to_radians(), b[1].to_radians());
    let dlon = lon2 - lon1;
    let y = dlon.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    let deg = y.atan2(x).to_degrees().rem_euclid(360.0);
    if deg >= 360.0 {
        0.0
    } else {
        deg
    }
}

pub fn synth_trajectory(
    kind: SynthKind,
    n: usize,
    noise_deg: f64,
    seed: u64,
    interval_model: IntervalModel,
) -> Result<Trajectory> {
    if n < 2 {
        return Err(Error::Precondition("synthetic trajectories need n ≥ 2".into()));
    }
    if !(noise_deg >= 0.0) {
        return Err(Error::Config("noise must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start: [f64; 2] = [rng.random_range(-75.0..-70.0), rng.random_range(35.0..42.0)];
    let t0 = EPOCH_BASE + rng.random_range(0..86_400);
    let speed = rng.random_range(3.0..8.0);
    let heading0: f64 = rng.random_range(0.0..360.0);
    let nominal = interval_model.nominal() as f64;
    let duration = n as f64 * nominal;
    let times = interval_model.timestamps(n, t0, &mut rng);
    let elapsed = |k: usize| (times[k] - t0) as f64;

    let positions: Vec<[f64; 2]> = match kind {
        SynthKind::Straight => {
            let quadrant = ((heading0 / 90.0).round() as i64).rem_euclid(4);
            let (sign, along_meridian) = match quadrant {
                0 => (1.0, true),
                1 => (1.0, false),
                2 => (-1.0, true),
                _ => (-1.0, false),
            };
            let rate = if along_meridian {
                speed / METRES_PER_DEGREE
            } else {
                speed / (METRES_PER_DEGREE * start[1].to_radians().cos())
            };
            (0..n)
                .map(|k| {
                    let d = sign * rate * elapsed(k);
                    if along_meridian {
                        [start[0], start[1] + d]
                    } else {
                        [start[0] + d, start[1]]
                    }
                })
                .collect()
        }
        SynthKind::Loop => {
            let radius = speed * duration / (2.0 * PI) / METRES_PER_DEGREE;
            let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let phase = heading0.to_radians();
            (0..n)
                .map(|k| {
                    let phi = phase + dir * 2.0 * PI * elapsed(k) / duration;
                    [start[0] + radius * phi.cos(), start[1] + radius * phi.sin()]
                })
                .collect()
        }
        SynthKind::Zigzag => {
            let leg = rng.random_range(4..=8usize);
            let swing = rng.random_range(30.0..60.0);
            let mut pts = vec![start];
            for k in 1..n {
                let leg_idx = (k - 1) / leg;
                let (sign, mult) = if leg_idx % 2 == 0 { (1.0, 0.6) } else { (-1.0, 1.4) };
                let dt = (times[k] - times[k - 1]) as f64;
                let prev = pts[k - 1];
                pts.push(destination_point(prev, heading0 + sign * swing, speed * mult * dt));
            }
            pts
        }
        SynthKind::Mixed => {
            let regimes = mixed_regimes(&mut rng, heading0, speed, nominal, elapsed(n - 1));
            let state = |tau: f64| {
                let r = regimes.iter().rev().find(|r| r.start <= tau).unwrap_or(&regimes[0]);
                (r.heading_at(tau), r.speed)
            };
            let mut pts = vec![start];
            for k in 1..n {
                let mid = 0.5 * (elapsed(k) + elapsed(k - 1));
                let dt = elapsed(k) - elapsed(k - 1);
                let (heading, v) = state(mid);
                pts.push(destination_point(pts[k - 1], heading, v * dt));
            }
            pts
        }
    };

    let vessel_id = format!("synth-{seed}");
    let noise = Normal::new(0.0, noise_deg.max(1e-300)).unwrap();
    let records = (0..n)
        .map(|k| {
            // Reported over the segment ending at k, so a record never looks ahead.
            let (a, b) = if k == 0 { (0, 1) } else { (k - 1, k) };
            let dist = haversine_m(positions[a], positions[b]);
            let dt = (times[b] - times[a]) as f64;
            let (dlon, dlat) = if noise_deg > 0.0 {
                (noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            AisRecord {
                vessel_id: vessel_id.clone(),
                timestamp: times[k],
                lon: positions[k][0] + dlon,
                lat: positions[k][1] + dlat,
                sog: dist / dt * KNOTS_PER_MPS,
                cog: bearing_deg(positions[a], positions[b]),
            }
        })
        .collect();
    Ok(Trajectory { vessel_id, records })
}
