//! Channel-independent patching, patch/position/timestamp embedding, patch
//! masking, a small self-attention encoder and the history reconstruction
//! projection.
//!
//! All channels of all samples in a batch are stacked into a single
//! `(B·C·Q) × d_m` matrix; attention runs within each block of `Q` rows, so
//! channels never see each other.

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Mat, ParamId, Tape, Var};
use crate::error::{Error, Result};
use crate::forecaster::ModelConfig;
use crate::nn::{sinusoidal_positions, time_features, AttentionBlock, Init, Linear, TIME_FEATURES};

/// `⌊(h − L_p)/S⌋ + 2`.
pub fn patch_count(h: usize, patch_len: usize, stride: usize) -> usize {
    (h - patch_len) / stride + 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    /// One `Q × L_p` matrix per channel.
    pub patches: Vec<Mat>,
    /// Mean time offset (seconds) of each patch.
    pub patch_times: Vec<f64>,
    pub q: usize,
    pub patch_len: usize,
    pub stride: usize,
}

impl PatchSet {
    pub fn channel_count(&self) -> usize {
        self.patches.len()
    }

    /// All channels stacked: `(C·Q) × L_p`.
    pub fn stacked(&self) -> Mat {
        let views: Vec<_> = self.patches.iter().map(|p| p.view()).collect();
        ndarray::concatenate(ndarray::Axis(0), &views).unwrap()
    }
}

/// Slice each column of `x` (`h × C`) into `Q` strided patches after
/// replicating the last row `stride` times. `times` are per-row offsets.
pub fn patchify(
    x: ArrayView2<'_, f64>,
    times: &[f64],
    patch_len: usize,
    stride: usize,
) -> Result<PatchSet> {
    let (h, channels) = x.dim();
    if patch_len == 0 || stride == 0 {
        return Err(Error::Config("patch length and stride must be positive".into()));
    }
    if h < patch_len {
        return Err(Error::Precondition(format!(
            "history length {h} shorter than patch length {patch_len}"
        )));
    }
    if times.len() != h {
        return Err(Error::Shape(format!("{} timestamps for {h} rows", times.len())));
    }
    let q = patch_count(h, patch_len, stride);
    let padded = |r: usize| r.min(h - 1);
    let patches = (0..channels)
        .map(|c| {
            Array2::from_shape_fn((q, patch_len), |(k, j)| x[[padded(k * stride + j), c]])
        })
        .collect();
    let patch_times = (0..q)
        .map(|k| (0..patch_len).map(|j| times[padded(k * stride + j)]).sum::<f64>() / patch_len as f64)
        .collect();
    Ok(PatchSet {
        patches,
        patch_times,
        q,
        patch_len,
        stride,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    /// Sorted masked patch indices, per channel.
    pub masked_indices: Vec<Vec<usize>>,
    pub ratio_bits: u64,
}

impl MaskPlan {
    pub fn ratio(&self) -> f64 {
        f64::from_bits(self.ratio_bits)
    }

    /// `max(1, ⌊Q·ratio⌋)`.
    pub fn count_for(q: usize, ratio: f64) -> usize {
        ((q as f64 * ratio).floor() as usize).max(1).min(q)
    }

    /// Draws masked indices per channel without replacement. `None` when the
    /// ratio is exactly zero (masking bypassed).
    pub fn draw(q: usize, channels: usize, ratio: f64, seed: u64) -> Result<Option<Self>> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::Config(format!("mask ratio {ratio} outside [0, 1]")));
        }
        if q == 0 {
            return Err(Error::Precondition("cannot mask zero patches".into()));
        }
        if ratio == 0.0 {
            return Ok(None);
        }
        let count = Self::count_for(q, ratio);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let masked_indices = (0..channels)
            .map(|_| {
                let mut idx = sample(&mut rng, q, count).into_vec();
                idx.sort_unstable();
                idx
            })
            .collect();
        Ok(Some(Self {
            masked_indices,
            ratio_bits: ratio.to_bits(),
        }))
    }

    /// Every patch of every channel masked.
    pub fn all(q: usize, channels: usize) -> Self {
        Self {
            masked_indices: vec![(0..q).collect(); channels],
            ratio_bits: 1f64.to_bits(),
        }
    }
}

/// Patches of several samples stacked row-wise: sample-major, then
/// channel, then patch index.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    pub patches: Mat,
    /// Time offset of every row's patch.
    pub row_times: Vec<f64>,
    pub q: usize,
    pub channels: usize,
    pub samples: usize,
}

impl PatchBatch {
    pub fn from_sets(sets: &[&PatchSet]) -> Self {
        assert!(!sets.is_empty(), "empty patch batch");
        let (q, channels) = (sets[0].q, sets[0].channel_count());
        assert!(
            sets.iter().all(|s| s.q == q && s.channel_count() == channels),
            "inconsistent patch sets in batch"
        );
        let stacked: Vec<Mat> = sets.iter().map(|s| s.stacked()).collect();
        let views: Vec<_> = stacked.iter().map(|m| m.view()).collect();
        let row_times = sets
            .iter()
            .flat_map(|s| (0..channels).flat_map(move |_| s.patch_times.iter().copied()))
            .collect();
        Self {
            patches: ndarray::concatenate(ndarray::Axis(0), &views).unwrap(),
            row_times,
            q,
            channels,
            samples: sets.len(),
        }
    }

    pub fn rows(&self) -> usize {
        self.samples * self.channels * self.q
    }
}

#[derive(Debug, Clone)]
pub struct MaskedEncoder {
    pub(crate) patch: Linear,
    pub(crate) time: Linear,
    pub(crate) mask_token: ParamId,
    blocks: Vec<AttentionBlock>,
    pub(crate) recon: Linear,
    q: usize,
    h: usize,
    channels: usize,
    d_model: usize,
}

impl MaskedEncoder {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Self {
        let q = patch_count(cfg.h, cfg.patch_len, cfg.patch_stride);
        let d = cfg.d_model;
        Self {
            patch: init.linear("enc.patch", cfg.patch_len, d),
            time: init.linear("enc.time", TIME_FEATURES, d),
            mask_token: init.normal("enc.mask", 1, d, 0.02),
            blocks: (0..cfg.enc_layers)
                .map(|i| AttentionBlock::new(init, &format!("enc.block{i}"), d, cfg.enc_heads, 4 * d))
                .collect(),
            recon: init.linear("enc.recon", 2 * q * d, 2 * cfg.h),
            q,
            h: cfg.h,
            channels: cfg.channels,
            d_model: d,
        }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Time offsets → `n × d_m` through the shared periodic embedding.
    pub fn embed_times(&self, t: &mut Tape, offsets: &[f64]) -> Var {
        let f = t.constant(time_features(offsets));
        self.time.forward(t, f)
    }

    /// `linear(patch) + position + timestamp` for one sample, channels
    /// stacked: `(C·Q) × d_m`.
    pub fn embed_patches(&self, t: &mut Tape, ps: &PatchSet) -> Var {
        let batch = PatchBatch::from_sets(&[ps]);
        let x = t.constant(batch.patches.clone());
        self.embed_batch(t, &batch, x)
    }

    /// As [`Self::embed_patches`] for a whole batch, with the stacked patch
    /// values supplied as a tape variable.
    pub fn embed_batch(&self, t: &mut Tape, batch: &PatchBatch, patches: Var) -> Var {
        let lin = self.patch.forward(t, patches);
        let ts = self.embed_times(t, &batch.row_times);
        let pe = sinusoidal_positions(batch.q, self.d_model);
        let tiled = Array2::from_shape_fn((batch.rows(), self.d_model), |(r, c)| pe[[r % batch.q, c]]);
        let pos = t.constant(tiled);
        let x = t.add(lin, ts);
        t.add(x, pos)
    }

    /// Replace masked rows with the learned mask embedding; one plan (or
    /// `None` for no masking) per sample of the stacked input.
    pub fn apply_mask(&self, t: &mut Tape, h: Var, plans: &[Option<&MaskPlan>]) -> Var {
        if plans.iter().all(Option::is_none) {
            return h;
        }
        let rows = t.value(h).nrows();
        let per_sample = rows / plans.len();
        let mut indicator = Array2::zeros((rows, 1));
        for (s, plan) in plans.iter().enumerate() {
            let Some(plan) = plan else { continue };
            for (c, idx) in plan.masked_indices.iter().enumerate() {
                for &k in idx {
                    indicator[[s * per_sample + c * self.q + k, 0]] = 1.0;
                }
            }
        }
        let keep = indicator.mapv(|m: f64| 1.0 - m);
        let keep = t.constant(keep.broadcast((rows, self.d_model)).unwrap().to_owned());
        let kept = t.mul(h, keep);
        let ind = t.constant(indicator);
        let tok = t.param(self.mask_token);
        let fill = t.matmul(ind, tok);
        t.add(kept, fill)
    }

    /// Self-attention blocks within each channel of each sample. Returns the
    /// encoding and every block's per-head `rows × Q` attention weights.
    pub fn encode(&self, t: &mut Tape, h: Var) -> (Var, Vec<Var>) {
        let mut x = h;
        let mut weights = Vec::new();
        for b in &self.blocks {
            let (y, w) = b.forward(t, x, Some(self.q));
            x = y;
            weights.extend(w);
        }
        (x, weights)
    }

    /// Flattened lon/lat channel encodings, one row per sample: `B × 2Qd_m`.
    pub fn position_features(&self, t: &mut Tape, encoded: Var) -> Var {
        let (rows, d) = t.value(encoded).dim();
        let per_sample = self.channels * self.q;
        let samples = rows / per_sample;
        let flat = t.reshape(encoded, samples, per_sample * d);
        t.slice_cols(flat, 0, 2 * self.q * d)
    }

    /// `B × 2h`: each row holds a sample's `h` normalized longitudes followed
    /// by its `h` latitudes.
    pub fn reconstruct_batch(&self, t: &mut Tape, encoded: Var) -> Var {
        let flat = self.position_features(t, encoded);
        self.recon.forward(t, flat)
    }

    /// `h × 2` normalized lon/lat of a single sample.
    pub fn reconstruct(&self, t: &mut Tape, encoded: Var) -> Var {
        let out = self.reconstruct_batch(t, encoded);
        let out = t.reshape(out, 2, self.h);
        t.transpose(out)
    }
}
