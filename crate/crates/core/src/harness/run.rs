//! Run directories: data loading and splitting, training with logs and
//! checkpoints, evaluation and the ablation matrix.
//!
//! A training run directory holds `config.txt` (canonical dump),
//! `run.json` (config hash, seed, split sizes), `log.ndjson`,
//! `checkpoint_best.ckpt`, `checkpoint_final.ckpt` and `metrics.{json,csv}`
//! (final checkpoint on the test split).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::report::{evaluate, EvalSplit, MetricsReport};
use crate::data::store::load_store;
use crate::data::{synth_trajectory, window_samples, SynthKind, Trajectory};
use crate::error::{Error, Result};
use crate::forecaster::{prepare, Maker, Variant};
use crate::ksl_trainer::{train, LogRecord};
use crate::prompt_lm::FrozenLmProvider;

pub const BEST_CHECKPOINT: &str = "checkpoint_best.ckpt";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.ckpt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            _ => Err(Error::Config(format!("split must be train, val or test, got `{s}`"))),
        }
    }
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        }
    }
}

pub struct Dataset {
    pub train: EvalSplit,
    pub val: EvalSplit,
    pub test: EvalSplit,
}

impl Dataset {
    pub fn split(&self, which: SplitName) -> &EvalSplit {
        match which {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

/// Seeds of the synthetic trajectories for a given run seed.
pub fn synth_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

pub fn load_trajectories(cfg: &ExperimentConfig) -> Result<Vec<Trajectory>> {
    match &cfg.data {
        Some(path) => load_store(path),
        None => (0..cfg.synth_count)
            .map(|i| {
                synth_trajectory(
                    SynthKind::Mixed,
                    cfg.synth_len,
                    cfg.synth_noise,
                    synth_seed(cfg.train.seed, i),
                    cfg.synth_interval,
                )
            })
            .collect(),
    }
}

/// Seeded shuffle of trajectory indices cut into train/val/test, so that
/// windows of one trajectory never straddle splits.
pub fn split_indices(n: usize, train_fraction: f64, val_fraction: f64, seed: u64) -> [Vec<usize>; 3] {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5b11_7000));
    let n_train = ((n as f64 * train_fraction).round() as usize).min(n);
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n - n_train);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    [idx, val, test]
}

pub fn build_split(
    trajs: &[Trajectory],
    indices: &[usize],
    cfg: &ExperimentConfig,
    lm: &dyn FrozenLmProvider,
) -> Result<EvalSplit> {
    let mut split = EvalSplit::default();
    for &i in indices {
        for w in window_samples(&trajs[i], cfg.model.h, cfg.model.p, cfg.stride) {
            split.prepared.push(prepare(&w, &cfg.model, lm, &cfg.dataset_name)?);
            split.raw.push(w);
        }
    }
    Ok(split)
}

pub fn load_dataset(cfg: &ExperimentConfig, lm: &dyn FrozenLmProvider) -> Result<Dataset> {
    let trajs = load_trajectories(cfg)?;
    let [tr, va, te] = split_indices(trajs.len(), cfg.train_fraction, cfg.val_fraction, cfg.train.seed);
    Ok(Dataset {
        train: build_split(&trajs, &tr, cfg, lm)?,
        val: build_split(&trajs, &va, cfg, lm)?,
        test: build_split(&trajs, &te, cfg, lm)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub config_hash: String,
    pub seed: u64,
    pub variant_flags: crate::forecaster::AblationFlags,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    pub steps: u64,
    pub final_val_mae_deg: Option<f64>,
    pub best_val_mae_deg: Option<f64>,
}

pub struct RunOutcome {
    pub dir: PathBuf,
    pub info: RunInfo,
    /// Final checkpoint on the test split; `None` when the split is empty.
    pub test_metrics: Option<MetricsReport>,
    pub model: Maker,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains one configuration into `dir`.
pub fn train_run(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let lm = cfg.lm_provider.load()?;
    let data = load_dataset(cfg, lm.as_ref())?;
    train_on(cfg, &data, lm, dir)
}

pub fn train_on(cfg: &ExperimentConfig, data: &Dataset, lm: Arc<dyn FrozenLmProvider>, dir: &Path) -> Result<RunOutcome> {
    create_dir(dir)?;
    write_file(&dir.join("config.txt"), &cfg.canonical())?;
    let log_path = dir.join("log.ndjson");
    let file = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = std::io::BufWriter::new(file);
    let mut sink = |r: &LogRecord| -> Result<()> {
        serde_json::to_writer(&mut log, r).map_err(|e| Error::io(&log_path, e.into()))?;
        log.write_all(b"\n").map_err(|e| Error::io(&log_path, e))
    };
    let model = Maker::new(cfg.model.clone(), cfg.train.seed, lm)?;
    let out = train(model, &data.train.prepared, &data.val.prepared, &cfg.train, &mut sink)?;
    log.flush().map_err(|e| Error::io(dir.join("log.ndjson"), e))?;

    let header = out.model.header(&cfg.lm_provider, &cfg.dataset_name);
    out.model.save(&dir.join(FINAL_CHECKPOINT), &header, &out.state)?;
    let best = Maker::with_params(cfg.model.clone(), out.model.lm().clone(), out.best_params.clone())?;
    best.save(&dir.join(BEST_CHECKPOINT), &header, &out.best_state)?;

    let test_metrics = if data.test.is_empty() {
        None
    } else {
        let report = evaluate(&out.model, &data.test, "test", cfg.eval_batch)?;
        report.write(dir, "metrics")?;
        Some(report)
    };
    let info = RunInfo {
        config_hash: cfg.hash(),
        seed: cfg.train.seed,
        variant_flags: cfg.model.flags,
        train_samples: data.train.len(),
        val_samples: data.val.len(),
        test_samples: data.test.len(),
        steps: out.state.step,
        final_val_mae_deg: out.final_val_mae_deg,
        best_val_mae_deg: out.best_val_mae_deg,
    };
    write_file(&dir.join("run.json"), &serde_json::to_string_pretty(&info).expect("info serializes"))?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        info,
        test_metrics,
        model: out.model,
    })
}

/// Checkpoint file named by `best`, `final` or a path.
pub fn checkpoint_path(run_dir: &Path, which: &str) -> PathBuf {
    match which {
        "best" => run_dir.join(BEST_CHECKPOINT),
        "final" => run_dir.join(FINAL_CHECKPOINT),
        other => PathBuf::from(other),
    }
}

/// Evaluates a saved checkpoint on one split of the configured data and
/// writes `eval_<split>.{json,csv}` into `run_dir`.
pub fn evaluate_run(cfg: &ExperimentConfig, run_dir: &Path, checkpoint: &str, split: SplitName) -> Result<(MetricsReport, PathBuf)> {
    let (model, header, _) = Maker::load(&checkpoint_path(run_dir, checkpoint))?;
    if header.model.h != cfg.model.h || header.model.p != cfg.model.p {
        return Err(Error::Config(format!(
            "checkpoint expects h={}, p={} but the config has h={}, p={}",
            header.model.h, header.model.p, cfg.model.h, cfg.model.p
        )));
    }
    let mut data_cfg = cfg.clone();
    data_cfg.model = header.model.clone();
    data_cfg.dataset_name = header.dataset_name.clone();
    let data = load_dataset(&data_cfg, model.lm().as_ref())?;
    let report = evaluate(&model, data.split(split), split.as_str(), cfg.eval_batch)?;
    create_dir(run_dir)?;
    let path = report.write(run_dir, &format!("eval_{}", split.as_str()))?;
    Ok((report, path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub run_dir: PathBuf,
    pub metrics: MetricsReport,
}

/// Trains and evaluates each variant under the same seed and data, one
/// subdirectory per variant, plus `ablation.{json,csv}`.
pub fn ablation_matrix(cfg: &ExperimentConfig, variants: &[Variant], out: &Path) -> Result<(Vec<AblationRow>, PathBuf)> {
    if variants.is_empty() {
        return Err(Error::Config("no variants requested".into()));
    }
    let configs: Vec<ExperimentConfig> = variants
        .iter()
        .map(|v| {
            let mut c = cfg.clone();
            c.model.flags = v.flags();
            c.validate().map(|_| c)
        })
        .collect::<Result<_>>()?;
    let lm = cfg.lm_provider.load()?;
    let mut rows = Vec::new();
    for (v, c) in variants.iter().zip(&configs) {
        // Prompt text depends on the flags, so each variant prepares its own.
        let data = load_dataset(c, lm.as_ref())?;
        let dir = out.join(v.name());
        let run = train_on(c, &data, lm.clone(), &dir)?;
        let metrics = run
            .test_metrics
            .ok_or_else(|| Error::Input("the test split is empty".into()))?;
        rows.push(AblationRow {
            variant: v.name().into(),
            run_dir: dir,
            metrics,
        });
    }
    create_dir(out)?;
    let json = out.join("ablation.json");
    write_file(&json, &serde_json::to_string_pretty(&rows).expect("rows serialize"))?;
    let mut csv = String::from("variant,band,mae_deg,mae_norm\n");
    for r in &rows {
        for b in &r.metrics.bands {
            csv.push_str(&format!("{},{},{},{}\n", r.variant, b.band, b.mae_deg, b.mae_norm));
        }
    }
    write_file(&out.join("ablation.csv"), &csv)?;
    Ok((rows, json))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_a_seeded_partition() {
        let [a, b, c] = split_indices(20, 0.7, 0.1, 3);
        assert_eq!((a.len(), b.len(), c.len()), (14, 2, 4));
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        assert_eq!(split_indices(20, 0.7, 0.1, 3), [a, b, c]);
        assert_ne!(split_indices(20, 0.7, 0.1, 4)[0], split_indices(20, 0.7, 0.1, 3)[0]);
        let [a, b, c] = split_indices(3, 0.7, 0.1, 0);
        assert_eq!((a.len(), b.len(), c.len()), (2, 0, 1));
    }
}
