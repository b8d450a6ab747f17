use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NORM_EPSILON: f64 = 1e-5;

/// Per-channel statistics from one history window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub epsilon: f64,
}

impl NormStats {
    pub fn scale(&self, channel: usize) -> f64 {
        self.std[channel] + self.epsilon
    }

    pub fn normalize_value(&self, channel: usize, x: f64) -> f64 {
        (x - self.mean[channel]) / self.scale(channel)
    }

    pub fn denormalize_value(&self, channel: usize, z: f64) -> f64 {
        z * self.scale(channel) + self.mean[channel]
    }
}

/// Standardize each column with its own mean and population std.
pub fn instance_normalize(history: ArrayView2<'_, f64>) -> (Array2<f64>, NormStats) {
    let (rows, cols) = history.dim();
    assert!(rows >= 2, "instance normalization needs at least 2 rows");
    let n = rows as f64;
    let mut mean = vec![0.0; cols];
    let mut std = vec![0.0; cols];
    for c in 0..cols {
        let col = history.column(c);
        let m = col.sum() / n;
        let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        mean[c] = m;
        std[c] = var.sqrt();
    }
    let stats = NormStats {
        mean,
        std,
        epsilon: NORM_EPSILON,
    };
    let out = Array2::from_shape_fn((rows, cols), |(r, c)| {
        stats.normalize_value(c, history[[r, c]])
    });
    (out, stats)
}

/// Map normalized lon/lat predictions (`p × 2`) back to degrees.
pub fn denormalize(pred: ArrayView2<'_, f64>, stats: &NormStats) -> Result<Array2<f64>> {
    if pred.ncols() != 2 || stats.mean.len() < 2 || stats.std.len() != stats.mean.len() {
        return Err(Error::Shape(format!(
            "expected p×2 predictions and ≥2 stat channels, got {}×{} and {} channels",
            pred.nrows(),
            pred.ncols(),
            stats.mean.len()
        )));
    }
    Ok(Array2::from_shape_fn(pred.dim(), |(r, c)| {
        stats.denormalize_value(c, pred[[r, c]])
    }))
}
