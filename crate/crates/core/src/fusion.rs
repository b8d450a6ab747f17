//! Multi-modal knowledge transfer: vocabulary prototypes projected from the
//! frozen word embeddings act as keys/values for cross-attention queried by
//! the trajectory encoding; the result is joined with the projected prompt
//! hidden states and pooled into one decoder input per variate.

use ndarray::Array2;

use crate::autograd::{Mat, ParamId, Tape, Var};
use crate::error::{Error, Result};
use crate::forecaster::ModelConfig;
use crate::nn::{group_mean_matrix, repeat_rows_matrix, Init, Linear};

#[derive(Debug, Clone)]
pub struct Fusion {
    /// `V′ × vocab`: learned combination over the vocabulary axis.
    pub(crate) prototypes: ParamId,
    pub(crate) vocab: Linear,
    pub(crate) w_q: ParamId,
    pub(crate) w_k: ParamId,
    pub(crate) w_v: ParamId,
    pub(crate) up: Linear,
    pub(crate) text: Linear,
    pub(crate) dec: Linear,
    d_model: usize,
    hidden: usize,
}

/// Keys and values derived once per batch from `H_E`.
#[derive(Debug, Clone, Copy)]
pub struct KeyValues {
    pub h_e: Var,
    pub k: Var,
    pub v: Var,
}

/// Mean prompt hidden state of one sample and its token count.
#[derive(Debug, Clone, PartialEq)]
pub struct TextSummary {
    pub mean: Vec<f64>,
    pub tokens: usize,
}

impl Fusion {
    pub fn new(init: &mut Init, cfg: &ModelConfig, vocab_size: usize, d_llm: usize) -> Self {
        let (d, big) = (cfg.d_model, cfg.hidden_dim);
        Self {
            prototypes: init.uniform("fusion.proto", cfg.prototypes, vocab_size, vocab_size),
            vocab: init.linear("fusion.vocab", d_llm, big),
            w_q: init.uniform("fusion.wq", d, d, d),
            w_k: init.uniform("fusion.wk", big, d, big),
            w_v: init.uniform("fusion.wv", big, d, big),
            up: init.linear("fusion.up", d, big),
            text: init.linear("fusion.text", d_llm, big),
            dec: init.linear("fusion.dec", big, cfg.dec_width),
            d_model: d,
            hidden: big,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.prototypes, self.w_q, self.w_k, self.w_v];
        for l in [self.vocab, self.up, self.text, self.dec] {
            ids.extend(l.ids());
        }
        ids
    }

    /// `H_E = (P W_E) W + b`, `V′ × D`.
    pub fn project_vocab(&self, t: &mut Tape, w_e: Var) -> Var {
        let p = t.param(self.prototypes);
        let protos = t.matmul(p, w_e);
        self.vocab.forward(t, protos)
    }

    pub fn keys_values(&self, t: &mut Tape, w_e: Var) -> KeyValues {
        let h_e = self.project_vocab(t, w_e);
        let wk = t.param(self.w_k);
        let wv = t.param(self.w_v);
        KeyValues {
            h_e,
            k: t.matmul(h_e, wk),
            v: t.matmul(h_e, wv),
        }
    }

    /// `softmax(H_M W_Q Kᵀ / √d_m) V` before the up-projection, with the
    /// attention weights. Rows are independent, so any number of stacked
    /// channels and samples may share one call.
    pub fn attend(&self, t: &mut Tape, h_m: Var, kv: &KeyValues) -> (Var, Var) {
        let wq = t.param(self.w_q);
        let q = t.matmul(h_m, wq);
        let kt = t.transpose(kv.k);
        let logits = t.matmul(q, kt);
        let logits = t.scale(logits, 1.0 / (self.d_model as f64).sqrt());
        let w = t.softmax(logits);
        (t.matmul(w, kv.v), w)
    }

    /// `H_A`: attention output up-projected to width `D`.
    pub fn cross_attend(&self, t: &mut Tape, h_m: Var, kv: &KeyValues) -> (Var, Var) {
        let (a, w) = self.attend(t, h_m, kv);
        (self.up.forward(t, a), w)
    }

    /// Prompt hidden states `H_L` mapped to width `D`.
    pub fn project_text(&self, t: &mut Tape, h_l: Var) -> Var {
        self.text.forward(t, h_l)
    }

    /// `H_C`: `H_A` rows followed by the projected prompt rows.
    pub fn fuse(&self, t: &mut Tape, h_a: Var, h_l_proj: Option<Var>) -> Result<Var> {
        let Some(h_l) = h_l_proj else { return Ok(h_a) };
        let (wa, wl) = (t.value(h_a).ncols(), t.value(h_l).ncols());
        if wa != wl {
            return Err(Error::Shape(format!("cannot concatenate widths {wa} and {wl}")));
        }
        if t.value(h_l).nrows() == 0 {
            return Ok(h_a);
        }
        Ok(t.concat_rows(&[h_a, h_l]))
    }

    /// `H_G`: mean over each channel's `H_C` rows, then the decoder map.
    /// One output row per channel.
    pub fn to_decoder_input(&self, t: &mut Tape, h_c: &[Var]) -> Var {
        let pooled: Vec<Var> = h_c.iter().map(|&h| t.mean_rows(h)).collect();
        let stacked = t.concat_rows(&pooled);
        self.dec.forward(t, stacked)
    }

    /// Same result as `to_decoder_input(fuse(cross_attend(..), text))` for
    /// every channel of every sample, without materialising `H_C`: the mean
    /// of a concatenation is the count-weighted mean of its parts and both
    /// parts are affine in their inputs.
    ///
    /// `attn` is the stacked pre-projection attention output
    /// (`B·C·Q × d_m`); returns `B·C × dec_width`.
    pub fn pooled_decoder_input(
        &self,
        t: &mut Tape,
        attn: Var,
        q: usize,
        channels: usize,
        text: &[TextSummary],
    ) -> Var {
        let samples = text.len();
        let groups = samples * channels;
        let avg = t.constant(group_mean_matrix(groups, q));
        let a = t.matmul(avg, attn);
        let h_a = self.up.forward(t, a);
        if text.iter().all(|s| s.tokens == 0) {
            return self.dec.forward(t, h_a);
        }
        let width = text[0].mean.len();
        let means = Array2::from_shape_fn((samples, width), |(s, c)| text[s].mean[c]);
        let means = t.constant(means);
        let txt = self.text.forward(t, means);
        let rep = t.constant(repeat_rows_matrix(samples, channels));
        let txt = t.matmul(rep, txt);
        let weight = |s: usize, own: bool| {
            let n = text[s].tokens as f64;
            let total = q as f64 + n;
            if own { q as f64 / total } else { n / total }
        };
        let wa = Array2::from_shape_fn((groups, self.hidden), |(r, _)| weight(r / channels, true));
        let wt = Array2::from_shape_fn((groups, self.hidden), |(r, _)| weight(r / channels, false));
        let wa = t.constant(wa);
        let wt = t.constant(wt);
        let pa = t.mul(h_a, wa);
        let pt = t.mul(txt, wt);
        let pooled = t.add(pa, pt);
        self.dec.forward(t, pooled)
    }
}

pub fn summarize_text(h_l: &Mat) -> TextSummary {
    let tokens = h_l.nrows();
    let mean = if tokens == 0 {
        vec![0.0; h_l.ncols()]
    } else {
        h_l.mean_axis(ndarray::Axis(0)).unwrap().to_vec()
    };
    TextSummary { mean, tokens }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::gradcheck::{check_params, rel_err};
    use crate::autograd::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            d_model: 4,
            hidden_dim: 6,
            prototypes: 3,
            dec_width: 5,
            ..ModelConfig::default()
        }
    }

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    fn setup(seed: u64, vocab: usize, d_llm: usize) -> (Fusion, ParamStore) {
        let mut store = ParamStore::new();
        let f = Fusion::new(&mut Init::new(&mut store, seed), &small_cfg(), vocab, d_llm);
        (f, store)
    }

    #[test]
    fn vocab_projection_shape_zero_and_linearity() {
        let cfg = ModelConfig::default();
        let mut store = ParamStore::new();
        let f = Fusion::new(&mut Init::new(&mut store, 1), &cfg, 50, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w_e = rand_mat(&mut rng, 50, 8);
        let mut t = Tape::new(&store);
        let x = t.constant(w_e.clone());
        let h = f.project_vocab(&mut t, x);
        assert_eq!(t.value(h).dim(), (100, 500));
        let z = t.constant(Mat::zeros((50, 8)));
        let hz = f.project_vocab(&mut t, z);
        let bias = store.get(f.vocab.b);
        for row in t.value(hz).rows() {
            assert_eq!(row, bias.row(0));
        }
        let x2 = t.constant(&w_e * 2.0);
        let h2 = f.project_vocab(&mut t, x2);
        let lhs = t.value(h2) - bias;
        let rhs = (t.value(h) - bias) * 2.0;
        assert!(rel_err(&lhs, &rhs) < 1e-12);
    }

    /// Straightforward per-row loop over the attention definition.
    fn brute_force(h_m: &Mat, h_e: &Mat, wq: &Mat, wk: &Mat, wv: &Mat) -> Mat {
        let q = h_m.dot(wq);
        let k = h_e.dot(wk);
        let v = h_e.dot(wv);
        let d = wq.ncols() as f64;
        let mut out = Mat::zeros((q.nrows(), v.ncols()));
        for i in 0..q.nrows() {
            let logits: Vec<f64> = (0..k.nrows())
                .map(|j| (0..q.ncols()).map(|c| q[[i, c]] * k[[j, c]]).sum::<f64>() / d.sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..k.nrows() {
                for c in 0..v.ncols() {
                    out[[i, c]] += e[j] / z * v[[j, c]];
                }
            }
        }
        out
    }

    #[test]
    fn attention_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for case in 0..20 {
            let (f, store) = setup(case, 7, 5);
            let h_m = rand_mat(&mut rng, 2 + case as usize % 3, 4);
            let w_e = rand_mat(&mut rng, 7, 5);
            let mut t = Tape::new(&store);
            let x = t.constant(w_e);
            let kv = f.keys_values(&mut t, x);
            let hm = t.constant(h_m.clone());
            let (a, w) = f.attend(&mut t, hm, &kv);
            let want = brute_force(
                &h_m,
                t.value(kv.h_e),
                store.get(f.w_q),
                store.get(f.w_k),
                store.get(f.w_v),
            );
            let diff = (t.value(a) - &want).mapv(f64::abs).fold(0.0f64, |m, &x| m.max(x));
            assert!(diff < 1e-10, "case {case}: {diff}");
            for row in t.value(w).rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn identical_keys_give_mean_of_values() {
        let (f, mut store) = setup(4, 7, 5);
        // Identical prototype rows make every key (and value) row equal.
        store.get_mut(f.prototypes).fill(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = Tape::new(&store);
        let x = t.constant(rand_mat(&mut rng, 7, 5));
        let kv = f.keys_values(&mut t, x);
        let hm = t.constant(rand_mat(&mut rng, 3, 4));
        let (a, w) = f.attend(&mut t, hm, &kv);
        for row in t.value(w).rows() {
            assert!(row.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));
        }
        let mean_v = t.value(kv.v).mean_axis(ndarray::Axis(0)).unwrap();
        for row in t.value(a).rows() {
            assert!(row.iter().zip(mean_v.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn fuse_shapes_and_locality() {
        let cfg = ModelConfig::default();
        let mut store = ParamStore::new();
        let f = Fusion::new(&mut Init::new(&mut store, 1), &cfg, 20, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h_l = rand_mat(&mut rng, 10, 8);
        let mut t = Tape::new(&store);
        let ha = t.constant(rand_mat(&mut rng, 3, 500));
        let hl = t.constant(h_l.clone());
        let hl = f.project_text(&mut t, hl);
        let hc = f.fuse(&mut t, ha, Some(hl)).unwrap();
        assert_eq!(t.value(hc).dim(), (13, 500));
        let empty = t.constant(Mat::zeros((0, 500)));
        let same = f.fuse(&mut t, ha, Some(empty)).unwrap();
        assert_eq!(t.value(same), t.value(ha));
        let narrow = t.constant(Mat::zeros((2, 499)));
        assert!(matches!(f.fuse(&mut t, ha, Some(narrow)), Err(Error::Shape(_))));

        let mut permuted = h_l.clone();
        permuted.row_mut(0).assign(&h_l.row(9));
        permuted.row_mut(9).assign(&h_l.row(0));
        let hp = t.constant(permuted);
        let hp = f.project_text(&mut t, hp);
        let hc2 = f.fuse(&mut t, ha, Some(hp)).unwrap();
        let (a, b) = (t.value(hc).clone(), t.value(hc2).clone());
        assert_eq!(a.row(3), b.row(12));
        assert_eq!(a.row(12), b.row(3));
        for r in (0..13).filter(|r| ![3, 12].contains(r)) {
            assert_eq!(a.row(r), b.row(r));
        }
        // Pooling is invariant to the permutation.
        let g1 = f.to_decoder_input(&mut t, &[hc]);
        let g2 = f.to_decoder_input(&mut t, &[hc2]);
        assert!(rel_err(t.value(g1), t.value(g2)) < 1e-12);
    }

    #[test]
    fn constant_rows_pool_to_that_row() {
        let (f, store) = setup(7, 7, 5);
        let mut t = Tape::new(&store);
        let row = Array2::from_shape_fn((1, 6), |(_, c)| c as f64 * 0.3 - 0.5);
        let hc = t.constant(row.broadcast((4, 6)).unwrap().to_owned());
        let g = f.to_decoder_input(&mut t, &[hc, hc, hc, hc]);
        assert_eq!(t.value(g).nrows(), 4);
        let single = t.constant(row);
        let want = f.dec.forward(&mut t, single);
        for r in t.value(g).rows() {
            assert!(r.iter().zip(t.value(want).iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn pooled_form_equals_explicit_concatenation() {
        let (f, store) = setup(8, 7, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (q, channels) = (3, 2);
        let w_e = rand_mat(&mut rng, 7, 5);
        let h_ls = [rand_mat(&mut rng, 4, 5), Mat::zeros((0, 5)), rand_mat(&mut rng, 1, 5)];
        let h_m = rand_mat(&mut rng, h_ls.len() * channels * q, 4);
        let mut t = Tape::new(&store);
        let x = t.constant(w_e);
        let kv = f.keys_values(&mut t, x);
        let hm = t.constant(h_m.clone());
        let (attn, _) = f.attend(&mut t, hm, &kv);
        let summaries: Vec<_> = h_ls.iter().map(summarize_text).collect();
        let pooled = f.pooled_decoder_input(&mut t, attn, q, channels, &summaries);
        let pooled = t.value(pooled).clone();

        for (s, h_l) in h_ls.iter().enumerate() {
            let hl = t.constant(h_l.clone());
            let proj = f.project_text(&mut t, hl);
            let mut h_c = Vec::new();
            for c in 0..channels {
                let rows = h_m.slice(ndarray::s![(s * channels + c) * q..(s * channels + c + 1) * q, ..]);
                let hm = t.constant(rows.to_owned());
                let (h_a, _) = f.cross_attend(&mut t, hm, &kv);
                h_c.push(f.fuse(&mut t, h_a, Some(proj)).unwrap());
            }
            let g = f.to_decoder_input(&mut t, &h_c);
            let want = t.value(g);
            let got = pooled.slice(ndarray::s![s * channels..(s + 1) * channels, ..]);
            let diff = (&got - want).mapv(f64::abs).fold(0.0f64, |m, &x| m.max(x));
            assert!(diff < 1e-12, "sample {s}: {diff}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (f, store) = setup(10, 7, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w_e = rand_mat(&mut rng, 7, 5);
        let h_m = rand_mat(&mut rng, 2, 4);
        let h_l = rand_mat(&mut rng, 3, 5);
        let target = rand_mat(&mut rng, 1, 5);
        let loss = |t: &mut Tape, hm: Var| {
            let x = t.constant(w_e.clone());
            let kv = f.keys_values(t, x);
            let (h_a, _) = f.cross_attend(t, hm, &kv);
            let hl = t.constant(h_l.clone());
            let proj = f.project_text(t, hl);
            let h_c = f.fuse(t, h_a, Some(proj)).unwrap();
            let g = f.to_decoder_input(t, &[h_c]);
            let l1 = t.mae(g, &target);
            let sq = t.mul(g, g);
            let l2 = t.mean_all(sq);
            t.sum(&[l1, l2])
        };
        let mut t = Tape::new(&store);
        let hm = t.input(h_m.clone());
        let l = loss(&mut t, hm);
        let analytic = t.backward(l).wrt(hm).unwrap().clone();
        let eps = 1e-6;
        let numeric = Array2::from_shape_fn(h_m.dim(), |(r, c)| {
            let eval = |d: f64| {
                let mut x = h_m.clone();
                x[[r, c]] += d;
                let mut t = Tape::new(&store);
                let v = t.constant(x);
                let l = loss(&mut t, v);
                t.scalar(l)
            };
            (eval(eps) - eval(-eps)) / (2.0 * eps)
        });
        let err = rel_err(&analytic, &numeric);
        assert!(err < 1e-4, "H_M gradient error {err}");

        let err = check_params(
            &store,
            &f.param_ids(),
            &|t: &mut Tape| {
                let hm = t.constant(h_m.clone());
                loss(t, hm)
            },
            1e-6,
        );
        assert!(err < 1e-4, "parameter gradient error {err}");
    }
}
