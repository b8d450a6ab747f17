//! Horizon-banded MAE in degrees and in normalized units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecaster::{Maker, PreparedSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandMae {
    pub band: String,
    /// 1-based inclusive horizon steps.
    pub first: usize,
    pub last: usize,
    pub mae_deg: f64,
    pub mae_norm: f64,
}

/// Horizon bands for a forecast of `p` steps: 1–6, 7–12, 13–p and 1–p,
/// dropping the ones that start beyond `p`.
pub fn bands_for(p: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = [(1, 6), (7, 12), (13, p)]
        .into_iter()
        .filter(|&(a, _)| a <= p)
        .map(|(a, b)| (a, b.min(p)))
        .collect();
    out.push((1, p));
    out
}

/// Per-sample, per-step absolute errors averaged over the two coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorTable {
    pub deg: Vec<Vec<f64>>,
    pub norm: Vec<Vec<f64>>,
}

impl ErrorTable {
    pub fn len(&self) -> usize {
        self.deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deg.is_empty()
    }

    pub fn push(&mut self, pred: &[[f64; 2]], truth: &[[f64; 2]], scale: [f64; 2]) {
        assert_eq!(pred.len(), truth.len());
        let (mut d, mut n) = (Vec::with_capacity(pred.len()), Vec::with_capacity(pred.len()));
        for (a, b) in pred.iter().zip(truth) {
            let e = [(a[0] - b[0]).abs(), (a[1] - b[1]).abs()];
            d.push((e[0] + e[1]) / 2.0);
            n.push((e[0] / scale[0] + e[1] / scale[1]) / 2.0);
        }
        self.deg.push(d);
        self.norm.push(n);
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            deg: rows.iter().map(|&r| self.deg[r].clone()).collect(),
            norm: rows.iter().map(|&r| self.norm[r].clone()).collect(),
        }
    }

    /// Mean over every sample, both coordinates and steps `first..=last`.
    pub fn band(&self, first: usize, last: usize) -> (f64, f64) {
        let mean = |rows: &[Vec<f64>]| {
            let total: f64 = rows.iter().map(|r| r[first - 1..last].iter().sum::<f64>()).sum();
            total / (rows.len() * (last - first + 1)) as f64
        };
        (mean(&self.deg), mean(&self.norm))
    }

    pub fn bands(&self) -> Vec<BandMae> {
        let p = self.deg.first().map_or(0, Vec::len);
        bands_for(p)
            .into_iter()
            .map(|(a, b)| {
                let (mae_deg, mae_norm) = self.band(a, b);
                BandMae {
                    band: format!("{a}-{b}"),
                    first: a,
                    last: b,
                    mae_deg,
                    mae_norm,
                }
            })
            .collect()
    }
}

/// Predicted future positions in degrees, computed in fixed-size batches.
pub fn predict_all(model: &Maker, samples: &[PreparedSample], batch: usize) -> Vec<Vec<[f64; 2]>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let inputs: Vec<_> = chunk.iter().map(|s| &s.input).collect();
        out.extend(model.predict_degrees(&inputs));
    }
    out
}

pub fn error_table(model: &Maker, samples: &[PreparedSample], batch: usize) -> Result<ErrorTable> {
    if samples.is_empty() {
        return Err(Error::Input("cannot evaluate an empty split".into()));
    }
    let preds = predict_all(model, samples, batch);
    let mut table = ErrorTable::default();
    for (s, pred) in samples.iter().zip(&preds) {
        let st = &s.input.stats;
        table.push(pred, &s.targets.future_degrees, [st.scale(0), st.scale(1)]);
    }
    Ok(table)
}
