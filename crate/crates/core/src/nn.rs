//! Layers shared by the encoder, fusion and decoder.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Mat, ParamId, ParamStore, Tape, Var};

/// Periods (seconds) of the sine/cosine time features.
pub const TIME_PERIODS: [f64; 8] = [
    120.0, 300.0, 600.0, 1_200.0, 2_400.0, 4_800.0, 9_600.0, 19_200.0,
];

pub const TIME_FEATURES: usize = 2 * TIME_PERIODS.len();

/// Sine/cosine features of time offsets (seconds), one row per offset.
pub fn time_features(offsets: &[f64]) -> Mat {
    Array2::from_shape_fn((offsets.len(), TIME_FEATURES), |(r, c)| {
        let w = 2.0 * PI / TIME_PERIODS[c / 2];
        if c % 2 == 0 {
            (w * offsets[r]).sin()
        } else {
            (w * offsets[r]).cos()
        }
    })
}

/// Standard transformer sinusoidal encoding, `rows × width`.
pub fn sinusoidal_positions(rows: usize, width: usize) -> Mat {
    Array2::from_shape_fn((rows, width), |(pos, i)| {
        let k = (i / 2) as f64 * 2.0 / width as f64;
        let angle = pos as f64 / 10_000f64.powf(k);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Parameter factory drawing from one seeded stream.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Self {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `±1/√fan_in`.
    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let rng = &mut self.rng;
        let m = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound));
        self.store.insert(name, m)
    }

    pub fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).unwrap();
        let rng = &mut self.rng;
        let m = Array2::from_shape_fn((rows, cols), |_| dist.sample(rng));
        self.store.insert(name, m)
    }

    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> ParamId {
        self.store.insert(name, Array2::from_elem((rows, cols), value))
    }

    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.uniform(&format!("{name}.w"), fan_in, fan_out, fan_in),
            b: self.uniform(&format!("{name}.b"), 1, fan_out, fan_in),
        }
    }

    pub fn layer_norm(&mut self, name: &str, width: usize) -> LayerNorm {
        LayerNorm {
            gain: self.constant(&format!("{name}.g"), 1, width, 1.0),
            bias: self.constant(&format!("{name}.b"), 1, width, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        t.affine(x, self.w, self.b)
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let n = t.layer_norm(x);
        let g = t.param(self.gain);
        let b = t.param(self.bias);
        let y = t.mul_row(n, g);
        t.add_row(y, b)
    }
}

/// Pre-norm transformer block: `x + MHA(LN(x))`, then `x + FF(LN(x))`.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    heads: usize,
    width: usize,
}

impl AttentionBlock {
    pub fn new(init: &mut Init, name: &str, width: usize, heads: usize, ff_width: usize) -> Self {
        assert!(heads >= 1 && width.is_multiple_of(heads), "width must divide into heads");
        Self {
            ln1: init.layer_norm(&format!("{name}.ln1"), width),
            q: init.linear(&format!("{name}.attn.q"), width, width),
            k: init.linear(&format!("{name}.attn.k"), width, width),
            v: init.linear(&format!("{name}.attn.v"), width, width),
            o: init.linear(&format!("{name}.attn.o"), width, width),
            ln2: init.layer_norm(&format!("{name}.ln2"), width),
            ff1: init.linear(&format!("{name}.ff1"), width, ff_width),
            ff2: init.linear(&format!("{name}.ff2"), ff_width, width),
            heads,
            width,
        }
    }

    /// Attention runs independently within each block of `group`
    /// consecutive rows (all rows when `None`). Returns the block output and
    /// the `rows × group` attention weights of every head.
    pub fn forward(&self, t: &mut Tape, x: Var, group: Option<usize>) -> (Var, Vec<Var>) {
        let group = group.unwrap_or_else(|| t.value(x).nrows());
        let hd = self.width / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let n = self.ln1.forward(t, x);
        let q = self.q.forward(t, n);
        let k = self.k.forward(t, n);
        let v = self.v.forward(t, n);
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    t.slice_cols(q, head * hd, hd),
                    t.slice_cols(k, head * hd, hd),
                    t.slice_cols(v, head * hd, hd),
                )
            };
            let w = t.group_scores(qh, kh, group, scale);
            outs.push(t.group_apply(w, vh, group));
            weights.push(w);
        }
        let cat = if outs.len() == 1 { outs[0] } else { t.concat_cols(&outs) };
        let attn = self.o.forward(t, cat);
        let x = t.add(x, attn);
        let n = self.ln2.forward(t, x);
        let f = self.ff1.forward(t, n);
        let f = t.gelu(f);
        let f = self.ff2.forward(t, f);
        (t.add(x, f), weights)
    }
}

/// `(n·k) × n` matrix copying each row of an `n`-row input `k` times.
pub fn repeat_rows_matrix(n: usize, k: usize) -> Mat {
    Array2::from_shape_fn((n * k, n), |(r, c)| if r / k == c { 1.0 } else { 0.0 })
}

/// `n × (n·k)` matrix averaging each block of `k` consecutive rows.
pub fn group_mean_matrix(n: usize, k: usize) -> Mat {
    Array2::from_shape_fn((n, n * k), |(r, c)| if c / k == r { 1.0 / k as f64 } else { 0.0 })
}
