use ndarray::Array2;

use super::ModelConfig;
use crate::autograd::Mat;
use crate::data::{instance_normalize, NormStats, TrajectorySample};
use crate::error::{Error, Result};
use crate::fusion::{summarize_text, TextSummary};
use crate::kinematics::{acceleration_series, velocity_series, METRES_PER_DEGREE};
use crate::masked_encoder::{patchify, PatchSet};
use crate::prompt_lm::{embed_tokens, prompt_for, FrozenLmProvider};

/// Everything the prediction path reads: history records, history and
/// future timestamps, and the prompt built from the history. Future
/// positions never enter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub patches: PatchSet,
    /// `h × C` instance-normalized history.
    pub series: Mat,
    pub stats: NormStats,
    /// History timestamps minus the last history timestamp (seconds, ≤ 0).
    pub hist_offsets: Vec<f64>,
    /// Future timestamps minus the last history timestamp (seconds, > 0).
    pub future_offsets: Vec<f64>,
    /// Mean history interval, seconds.
    pub tau: f64,
    /// Metres per normalized position unit around this sample.
    pub m_per_unit: f64,
    pub text: Option<TextSummary>,
}

/// Supervision targets, derived from the true future window.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    /// `p` normalized longitudes followed by `p` latitudes.
    pub future_norm: Vec<f64>,
    /// `h` normalized longitudes followed by `h` latitudes.
    pub recon: Vec<f64>,
    /// m/s over the future window, `p − 1`.
    pub velocity: Vec<f64>,
    /// m/s², `p − 2`.
    pub acceleration: Vec<f64>,
    pub future_degrees: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub input: ModelInput,
    pub targets: Targets,
}

/// Removes the 360° jumps from the COG column so a course through north
/// stays continuous before normalization.
fn unwrap_course(rows: &mut [[f64; 4]]) {
    for r in 1..rows.len() {
        let step = (rows[r][3] - rows[r - 1][3] + 180.0).rem_euclid(360.0) - 180.0;
        rows[r][3] = rows[r - 1][3] + step;
    }
}

pub fn prepare_input(
    sample: &TrajectorySample,
    cfg: &ModelConfig,
    lm: &dyn FrozenLmProvider,
    dataset_name: &str,
) -> Result<ModelInput> {
    let (h, p) = (sample.h(), sample.p());
    if h != cfg.h || p != cfg.p {
        return Err(Error::Shape(format!(
            "sample has h={h}, p={p}; model expects h={}, p={}",
            cfg.h, cfg.p
        )));
    }
    let mut rows: Vec<[f64; 4]> = sample.history.iter().map(|r| r.channels()).collect();
    unwrap_course(&mut rows);
    let raw = Array2::from_shape_fn((h, cfg.channels), |(r, c)| rows[r][c]);
    let (series, stats) = instance_normalize(raw.view());
    let t_last = sample.history[h - 1].timestamp;
    let hist_offsets: Vec<f64> = sample.history.iter().map(|r| (r.timestamp - t_last) as f64).collect();
    let future_offsets: Vec<f64> = sample.future_timestamps.iter().map(|&ts| (ts - t_last) as f64).collect();
    let tau = -hist_offsets[0] / (h - 1) as f64;
    if !(tau > 0.0) || future_offsets.iter().any(|&o| o <= 0.0) {
        return Err(Error::Precondition("sample timestamps must strictly increase".into()));
    }
    let patches = patchify(series.view(), &hist_offsets, cfg.patch_len, cfg.patch_stride)?;
    let lat = stats.mean[1].to_radians();
    let m_per_unit = METRES_PER_DEGREE * 0.5 * (stats.scale(0) * lat.cos() + stats.scale(1));
    let text = if cfg.flags.use_llm {
        if cfg.flags.use_prompt {
            let prompt = prompt_for(sample, dataset_name, lm);
            Some(summarize_text(&embed_tokens(&prompt.token_ids, lm)?))
        } else {
            Some(summarize_text(&Mat::zeros((0, lm.embed_width()))))
        }
    } else {
        None
    };
    Ok(ModelInput {
        patches,
        series,
        stats,
        hist_offsets,
        future_offsets,
        tau,
        m_per_unit,
        text,
    })
}

pub fn prepare_targets(sample: &TrajectorySample, input: &ModelInput) -> Result<Targets> {
    let stats = &input.stats;
    let fp = &sample.future_positions;
    let future_norm = (0..2)
        .flat_map(|c| fp.iter().map(move |g| stats.normalize_value(c, g[c])))
        .collect();
    let recon = (0..2)
        .flat_map(|c| input.series.column(c).to_vec())
        .collect();
    let velocity = velocity_series(fp, &sample.future_timestamps)?;
    let acceleration = acceleration_series(&velocity, &sample.future_timestamps)?;
    Ok(Targets {
        future_norm,
        recon,
        velocity,
        acceleration,
        future_degrees: fp.clone(),
    })
}

pub fn prepare(
    sample: &TrajectorySample,
    cfg: &ModelConfig,
    lm: &dyn FrozenLmProvider,
    dataset_name: &str,
) -> Result<PreparedSample> {
    let input = prepare_input(sample, cfg, lm, dataset_name)?;
    let targets = prepare_targets(sample, &input)?;
    Ok(PreparedSample { input, targets })
}
