//! Metrics reports: banded MAE, the constant-velocity reference, and the
//! complexity/irregularity stratification.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{error_table, BandMae, ErrorTable};
use crate::data::TrajectorySample;
use crate::error::{Error, Result};
use crate::forecaster::{constant_velocity_baseline, Maker, PreparedSample};
use crate::kinematics::{quartile_levels, spatial_complexity, temporal_irregularity_of, StratificationLevel};

/// Raw windows of one split and their model-ready form, index-aligned.
#[derive(Debug, Clone, Default)]
pub struct EvalSplit {
    pub raw: Vec<TrajectorySample>,
    pub prepared: Vec<PreparedSample>,
}

impl EvalSplit {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumMae {
    /// `spatial` or `temporal`.
    pub axis: String,
    pub level: StratificationLevel,
    pub count: usize,
    /// `None` for an empty cell.
    pub mae_deg: Option<f64>,
    pub mae_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub samples: usize,
    pub bands: Vec<BandMae>,
    /// Constant-velocity extrapolation on the same samples.
    pub baseline_bands: Vec<BandMae>,
    /// Empty when the split has fewer than four samples.
    pub strata: Vec<StratumMae>,
}

impl MetricsReport {
    /// The band covering the whole horizon.
    pub fn overall(&self) -> &BandMae {
        self.bands.last().expect("at least one band")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("section,key,level,count,mae_deg,mae_norm\n");
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for (section, bands) in [("band", &self.bands), ("baseline", &self.baseline_bands)] {
            for b in bands {
                writeln!(s, "{section},{},,{},{},{}", b.band, self.samples, b.mae_deg, b.mae_norm).unwrap();
            }
        }
        for c in &self.strata {
            writeln!(s, "stratum,{},{},{},{},{}", c.axis, c.level.name(), c.count, opt(c.mae_deg), opt(c.mae_norm)).unwrap();
        }
        s
    }

    /// Writes `<stem>.json` and `<stem>.csv`; returns the JSON path.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        let json = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        Ok(json)
    }
}

fn baseline_table(split: &EvalSplit) -> Result<ErrorTable> {
    let mut table = ErrorTable::default();
    for (raw, prep) in split.raw.iter().zip(&split.prepared) {
        let st = &prep.input.stats;
        let pred = constant_velocity_baseline(raw)?;
        table.push(&pred, &prep.targets.future_degrees, [st.scale(0), st.scale(1)]);
    }
    Ok(table)
}

/// Complexity and irregularity scores of every window, history and future
/// together.
pub fn stratification_scores(raw: &[TrajectorySample]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut spatial = Vec::with_capacity(raw.len());
    let mut temporal = Vec::with_capacity(raw.len());
    for s in raw {
        let mut pos = s.history_positions();
        pos.extend_from_slice(&s.future_positions);
        spatial.push(spatial_complexity(&pos)?);
        temporal.push(temporal_irregularity_of(&s.all_timestamps(), s.h()));
    }
    Ok((spatial, temporal))
}

/// Per-level MAE along both axes. Levels come from quartiles of the
/// evaluated split itself.
pub fn stratify_table(table: &ErrorTable, raw: &[TrajectorySample]) -> Result<Vec<StratumMae>> {
    let (spatial, temporal) = stratification_scores(raw)?;
    let p = table.deg.first().map_or(0, Vec::len);
    let mut out = Vec::new();
    for (axis, scores) in [("spatial", spatial), ("temporal", temporal)] {
        let levels = quartile_levels(&scores)?;
        for level in StratificationLevel::ALL {
            let rows: Vec<usize> = (0..levels.len()).filter(|&i| levels[i] == level).collect();
            let (mae_deg, mae_norm) = if rows.is_empty() {
                (None, None)
            } else {
                let (d, n) = table.select(&rows).band(1, p);
                (Some(d), Some(n))
            };
            out.push(StratumMae {
                axis: axis.into(),
                level,
                count: rows.len(),
                mae_deg,
                mae_norm,
            });
        }
    }
    Ok(out)
}

pub fn evaluate(model: &Maker, split: &EvalSplit, split_name: &str, batch: usize) -> Result<MetricsReport> {
    let table = error_table(model, &split.prepared, batch)?;
    let strata = if split.len() >= 4 {
        stratify_table(&table, &split.raw)?
    } else {
        Vec::new()
    };
    Ok(MetricsReport {
        split: split_name.into(),
        samples: split.len(),
        bands: table.bands(),
        baseline_bands: baseline_table(split)?.bands(),
        strata,
    })
}

/// Stratified MAE only; the split must hold at least four samples.
pub fn stratified_evaluate(model: &Maker, split: &EvalSplit, batch: usize) -> Result<Vec<StratumMae>> {
    if split.len() < 4 {
        return Err(Error::Precondition(format!(
            "stratification needs at least 4 samples, split has {}",
            split.len()
        )));
    }
    stratify_table(&error_table(model, &split.prepared, batch)?, &split.raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_trajectory, window_samples, IntervalModel, SynthKind};
    use crate::kinematics::StratificationLevel::*;

    fn raw(kind: SynthKind, n: usize, seed: u64) -> Vec<TrajectorySample> {
        let t = synth_trajectory(kind, 8 + 4 + n - 1, 1e-4, seed, IntervalModel::Bursty { delta: 60 }).unwrap();
        window_samples(&t, 8, 4, 1)
    }

    fn table_for(raw: &[TrajectorySample], offset: f64) -> ErrorTable {
        let mut t = ErrorTable::default();
        for s in raw {
            let pred: Vec<[f64; 2]> = s.future_positions.iter().map(|g| [g[0] + offset, g[1] + offset]).collect();
            t.push(&pred, &s.future_positions, [1.0, 1.0]);
        }
        t
    }

    #[test]
    fn cells_partition_the_split() {
        let r = raw(SynthKind::Mixed, 37, 2);
        let cells = stratify_table(&table_for(&r, 0.01), &r).unwrap();
        for axis in ["spatial", "temporal"] {
            let row: Vec<_> = cells.iter().filter(|c| c.axis == axis).collect();
            assert_eq!(row.iter().map(|c| c.count).sum::<usize>(), 37);
            let count = |l| row.iter().find(|c| c.level == l).unwrap().count;
            assert!(4 * count(Low) < 37 && 4 * count(High) < 37);
            assert!(2 * count(Medium) >= 37);
            for c in &row {
                if c.count > 0 {
                    assert!((c.mae_deg.unwrap() - 0.01).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn identical_windows_are_all_medium() {
        let one = raw(SynthKind::Loop, 1, 3).remove(0);
        let r = vec![one; 6];
        let cells = stratify_table(&table_for(&r, 0.0), &r).unwrap();
        for c in cells {
            let expected = if c.level == Medium { 6 } else { 0 };
            assert_eq!(c.count, expected, "{c:?}");
            assert_eq!(c.mae_deg.is_none(), expected == 0);
        }
    }

    #[test]
    fn csv_has_one_row_per_entry() {
        let report = MetricsReport {
            split: "test".into(),
            samples: 3,
            bands: vec![BandMae {
                band: "1-4".into(),
                first: 1,
                last: 4,
                mae_deg: 0.5,
                mae_norm: 1.5,
            }],
            baseline_bands: vec![],
            strata: vec![StratumMae {
                axis: "spatial".into(),
                level: High,
                count: 0,
                mae_deg: None,
                mae_norm: None,
            }],
        };
        assert_eq!(
            report.to_csv(),
            "section,key,level,count,mae_deg,mae_norm\nband,1-4,,3,0.5,1.5\nstratum,spatial,High,0,,\n"
        );
    }
}
