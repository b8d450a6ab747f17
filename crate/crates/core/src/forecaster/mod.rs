//! The assembled model: masked encoder, prompt channel, fusion and an
//! inverted-attention decoder over variate tokens, with auxiliary velocity
//! and acceleration heads and every ablation variant.

mod checkpoint;
mod config;
mod input;
mod saved;

use std::sync::Arc;

use ndarray::Array2;

use crate::autograd::{Mat, ParamStore, Tape, Var};
use crate::data::TrajectorySample;
use crate::error::{Error, Result};
use crate::fusion::{Fusion, KeyValues, TextSummary};
use crate::masked_encoder::{MaskPlan, MaskedEncoder, PatchBatch};
use crate::nn::{repeat_rows_matrix, group_mean_matrix, AttentionBlock, Init, LayerNorm, Linear};
use crate::prompt_lm::FrozenLmProvider;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, TrainingState,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{AblationFlags, ModelConfig, Variant};
pub use saved::ModelHeader;
pub use input::{prepare, prepare_input, prepare_targets, ModelInput, PreparedSample, Targets};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    /// `p × 2` normalized lon/lat.
    pub pred_positions: Mat,
    /// `h × 2` normalized lon/lat.
    pub recon_positions: Mat,
    /// `p − 1` speeds, m/s.
    pub pred_velocity: Vec<f64>,
    /// `p − 2` accelerations, m/s².
    pub pred_acceleration: Vec<f64>,
}

/// Tape handles for one batch. Rows are samples; `pred` holds `p` lon values
/// followed by `p` lat values, `recon` likewise for the history, and the
/// kinematic heads are in normalized units per mean history interval.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub pred: Var,
    pub recon: Var,
    pub vel: Var,
    pub acc: Var,
    pub enc_weights: Vec<Var>,
    pub dec_weights: Vec<Var>,
    pub cross_weights: Option<Var>,
}

pub struct Maker {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub(crate) encoder: MaskedEncoder,
    pub(crate) fusion: Fusion,
    pub(crate) bypass: Linear,
    pub(crate) bypass_text: Linear,
    pub(crate) invert: Linear,
    pub(crate) future: Linear,
    pub(crate) dec_blocks: Vec<AttentionBlock>,
    pub(crate) dec_norm: LayerNorm,
    pub(crate) head: Linear,
    pub(crate) de_head: Linear,
    pub(crate) vel: Linear,
    pub(crate) acc: Linear,
    lm: Arc<dyn FrozenLmProvider>,
}

impl std::fmt::Debug for Maker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Maker")
            .field("cfg", &self.cfg)
            .field("params", &self.params.len())
            .field("lm", &self.lm.describe())
            .finish()
    }
}

impl Maker {
    /// Every component is allocated whatever the flags, in a fixed order, so
    /// that variants share their initial weights for a given seed. The frozen
    /// provider's tables are not part of `params`.
    pub fn new(cfg: ModelConfig, seed: u64, lm: Arc<dyn FrozenLmProvider>) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(&mut params, seed);
        let (d, dw, h, p, c) = (cfg.d_model, cfg.dec_width, cfg.h, cfg.p, cfg.channels);
        let encoder = MaskedEncoder::new(&mut init, &cfg);
        let fusion = Fusion::new(&mut init, &cfg, lm.vocab_size(), lm.embed_width());
        let bypass = init.linear("bypass", d, dw);
        let bypass_text = init.linear("bypass.text", lm.embed_width(), dw);
        let invert = init.linear("dec.invert", 2 * h + p + 1, dw);
        let future = init.linear("dec.future", p * d, dw);
        let dec_blocks = (0..cfg.dec_layers)
            .map(|i| AttentionBlock::new(&mut init, &format!("dec.block{i}"), dw, cfg.dec_heads, 4 * dw))
            .collect();
        let dec_norm = init.layer_norm("dec.norm", dw);
        let head = init.linear("dec.head", dw, p);
        let de_head = init.linear("de.head", c * dw, 2 * p);
        let vel = init.linear("kin.vel", 2 * dw, p - 1);
        let acc = init.linear("kin.acc", 2 * dw, p - 2);
        Ok(Self {
            cfg,
            params,
            encoder,
            fusion,
            bypass,
            bypass_text,
            invert,
            future,
            dec_blocks,
            dec_norm,
            head,
            de_head,
            vel,
            acc,
            lm,
        })
    }

    /// Rebuild from saved parameters; names and shapes must match.
    pub fn with_params(cfg: ModelConfig, lm: Arc<dyn FrozenLmProvider>, saved: ParamStore) -> Result<Self> {
        let mut model = Self::new(cfg, 0, lm)?;
        if saved.len() != model.params.len() {
            return Err(Error::Format {
                what: "checkpoint",
                detail: format!("{} parameters, model expects {}", saved.len(), model.params.len()),
            });
        }
        for (_, name, value) in saved.iter() {
            let Some(own) = model.params.id(name) else {
                return Err(Error::Format {
                    what: "checkpoint",
                    detail: format!("unknown parameter `{name}`"),
                });
            };
            let slot = model.params.get_mut(own);
            if slot.dim() != value.dim() {
                return Err(Error::Format {
                    what: "checkpoint",
                    detail: format!("parameter `{name}` has shape {:?}, expected {:?}", value.dim(), slot.dim()),
                });
            }
            slot.assign(value);
        }
        Ok(model)
    }

    pub fn lm(&self) -> &Arc<dyn FrozenLmProvider> {
        &self.lm
    }

    pub fn flags(&self) -> AblationFlags {
        self.cfg.flags
    }

    pub fn encoder(&self) -> &MaskedEncoder {
        &self.encoder
    }

    pub fn fusion(&self) -> &Fusion {
        &self.fusion
    }

    pub fn forward_batch(
        &self,
        t: &mut Tape,
        inputs: &[&ModelInput],
        masks: &[Option<&MaskPlan>],
    ) -> BatchForward {
        assert!(!inputs.is_empty(), "empty batch");
        assert_eq!(inputs.len(), masks.len());
        let cfg = &self.cfg;
        let flags = cfg.flags;
        let (b, c, p, q) = (inputs.len(), cfg.channels, cfg.p, self.encoder.q());

        let sets: Vec<_> = inputs.iter().map(|i| &i.patches).collect();
        let batch = PatchBatch::from_sets(&sets);
        let x = t.constant(batch.patches.clone());
        let e = self.encoder.embed_batch(t, &batch, x);
        let m = self.encoder.apply_mask(t, e, masks);
        let (enc, enc_weights) = self.encoder.encode(t, m);
        let recon = self.encoder.reconstruct_batch(t, enc);

        // H_G: one decoder-width row per (sample, variate).
        let mut cross_weights = None;
        let h_g = if flags.use_fusion {
            let w_e = t.constant(self.lm.word_embeddings().clone());
            let kv: KeyValues = self.fusion.keys_values(t, w_e);
            let (attn, w) = self.fusion.attend(t, enc, &kv);
            cross_weights = Some(w);
            let text: Vec<TextSummary> = inputs
                .iter()
                .map(|i| i.text.clone().expect("fusion requires prompt text"))
                .collect();
            self.fusion.pooled_decoder_input(t, attn, q, c, &text)
        } else {
            let avg = t.constant(group_mean_matrix(b * c, q));
            let pooled = t.matmul(avg, enc);
            let g = self.bypass.forward(t, pooled);
            if flags.use_llm {
                let width = self.lm.embed_width();
                let means = Array2::from_shape_fn((b, width), |(s, k)| {
                    inputs[s].text.as_ref().map_or(0.0, |txt| txt.mean[k])
                });
                let means = t.constant(means);
                let txt = self.bypass_text.forward(t, means);
                let rep = t.constant(repeat_rows_matrix(b, c));
                let txt = t.matmul(rep, txt);
                t.add(g, txt)
            } else {
                g
            }
        };

        let inv = t.constant(variate_inputs(inputs, cfg));
        let tokens = self.invert.forward(t, inv);
        let offsets: Vec<f64> = inputs.iter().flat_map(|i| i.future_offsets.iter().copied()).collect();
        let fut = self.encoder.embed_times(t, &offsets);
        let fut = t.reshape(fut, b, p * cfg.d_model);
        let fut = self.future.forward(t, fut);
        let rep = t.constant(repeat_rows_matrix(b, c));
        let fut = t.matmul(rep, fut);
        let tokens = t.add(tokens, h_g);
        let tokens = t.add(tokens, fut);

        let dw = cfg.dec_width;
        let mut dec_weights = Vec::new();
        let (pred, state) = if flags.use_decoder {
            let mut z = tokens;
            for blk in &self.dec_blocks {
                let (y, w) = blk.forward(t, z, Some(c));
                z = y;
                dec_weights.extend(w);
            }
            let z = self.dec_norm.forward(t, z);
            let out = self.head.forward(t, z);
            let out = t.reshape(out, b, c * p);
            let pred = t.slice_cols(out, 0, 2 * p);
            (pred, t.reshape(z, b, c * dw))
        } else {
            let flat = t.reshape(tokens, b, c * dw);
            (self.de_head.forward(t, flat), flat)
        };
        let kin = t.slice_cols(state, 0, 2 * dw);
        let vel = self.vel.forward(t, kin);
        let acc = self.acc.forward(t, kin);
        BatchForward {
            pred,
            recon,
            vel,
            acc,
            enc_weights,
            dec_weights,
            cross_weights,
        }
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &ModelInput, mask: Option<&MaskPlan>) -> ModelOutput {
        let mut t = Tape::new(&self.params);
        let f = self.forward_batch(&mut t, &[input], &[mask]);
        let (h, p) = (self.cfg.h, self.cfg.p);
        let split = |m: &Mat, n: usize| Array2::from_shape_fn((n, 2), |(r, c)| m[[0, c * n + r]]);
        let kv = input.m_per_unit / input.tau;
        let ka = kv / input.tau;
        ModelOutput {
            pred_positions: split(t.value(f.pred), p),
            recon_positions: split(t.value(f.recon), h),
            pred_velocity: t.value(f.vel).iter().map(|v| v * kv).collect(),
            pred_acceleration: t.value(f.acc).iter().map(|a| a * ka).collect(),
        }
    }

    /// Predicted future positions in degrees for a batch, without masking.
    pub fn predict_degrees(&self, inputs: &[&ModelInput]) -> Vec<Vec<[f64; 2]>> {
        let mut t = Tape::new(&self.params);
        let masks = vec![None; inputs.len()];
        let f = self.forward_batch(&mut t, inputs, &masks);
        let p = self.cfg.p;
        let pred = t.value(f.pred);
        inputs
            .iter()
            .enumerate()
            .map(|(s, inp)| {
                (0..p)
                    .map(|k| {
                        [
                            inp.stats.denormalize_value(0, pred[[s, k]]),
                            inp.stats.denormalize_value(1, pred[[s, p + k]]),
                        ]
                    })
                    .collect()
            })
            .collect()
    }
}

/// Per (sample, variate) row: the normalized series, history time offsets
/// and future time offsets, both in units of `h` mean intervals, and the
/// log aspect ratio of the two position scales in metres (`+a` on the
/// longitude row, `−a` on latitude, 0 elsewhere). Per-channel normalization
/// would otherwise hide how the two position channels compare.
fn variate_inputs(inputs: &[&ModelInput], cfg: &ModelConfig) -> Mat {
    let (c, h, p) = (cfg.channels, cfg.h, cfg.p);
    let mut out = Mat::zeros((inputs.len() * c, 2 * h + p + 1));
    for (s, inp) in inputs.iter().enumerate() {
        let unit = inp.tau * h as f64;
        let st = &inp.stats;
        let aspect = (st.scale(0) * st.mean[1].to_radians().cos() / st.scale(1)).ln();
        out[[s * c, 2 * h + p]] = aspect;
        out[[s * c + 1, 2 * h + p]] = -aspect;
        for ch in 0..c {
            let mut row = out.row_mut(s * c + ch);
            for k in 0..h {
                row[k] = inp.series[[k, ch]];
                row[h + k] = inp.hist_offsets[k] / unit;
            }
            for k in 0..p {
                row[2 * h + k] = inp.future_offsets[k] / unit;
            }
        }
    }
    out
}

/// Extrapolates the last position with the mean per-step velocity vector
/// (degrees per second) of the last three history steps.
pub fn constant_velocity_baseline(sample: &TrajectorySample) -> Result<Vec<[f64; 2]>> {
    let hist = &sample.history;
    if hist.len() < 2 {
        return Err(Error::Precondition("baseline needs at least 2 history records".into()));
    }
    let steps = 3.min(hist.len() - 1);
    let mut v = [0.0; 2];
    for w in hist[hist.len() - steps - 1..].windows(2) {
        let dt = (w[1].timestamp - w[0].timestamp) as f64;
        if dt <= 0.0 {
            return Err(Error::Precondition("history timestamps must increase".into()));
        }
        v[0] += (w[1].lon - w[0].lon) / dt / steps as f64;
        v[1] += (w[1].lat - w[0].lat) / dt / steps as f64;
    }
    let last = hist.last().unwrap();
    Ok(sample
        .future_timestamps
        .iter()
        .map(|&ts| {
            let dt = (ts - last.timestamp) as f64;
            [last.lon + v[0] * dt, last.lat + v[1] * dt]
        })
        .collect())
}
