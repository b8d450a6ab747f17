//! Read-only GPT-2 adapter: byte-level BPE tokenizer plus a forward pass
//! returning the final hidden states. Expects a model directory with
//! `config.json`, `vocab.json`, `merges.txt` and `model.safetensors`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{s, Array1, Array2};
use regex::Regex;
use safetensors::{Dtype, SafeTensors};
use serde::Deserialize;

use super::FrozenLmProvider;
use crate::autograd::{hex, Mat};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Deserialize)]
struct Gpt2Config {
    n_embd: usize,
    n_head: usize,
    n_layer: usize,
    n_positions: usize,
    vocab_size: usize,
    #[serde(default = "default_eps")]
    layer_norm_epsilon: f64,
}

fn default_eps() -> f64 {
    1e-5
}

struct Layer {
    ln1: (Array1<f64>, Array1<f64>),
    attn_w: Mat,
    attn_b: Array1<f64>,
    proj_w: Mat,
    proj_b: Array1<f64>,
    ln2: (Array1<f64>, Array1<f64>),
    fc_w: Mat,
    fc_b: Array1<f64>,
    out_w: Mat,
    out_b: Array1<f64>,
}

pub struct Gpt2Provider {
    cfg: Gpt2Config,
    wte: Mat,
    wpe: Mat,
    layers: Vec<Layer>,
    ln_f: (Array1<f64>, Array1<f64>),
    bpe: Bpe,
    checksum: String,
    dir: String,
    truncations: AtomicUsize,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn fmt_err(detail: impl ToString) -> Error {
    Error::Format {
        what: "pretrained model",
        detail: detail.to_string(),
    }
}

fn f16_to_f64(bits: u16) -> f64 {
    let sign = if bits >> 15 == 1 { -1.0 } else { 1.0 };
    let exp = ((bits >> 10) & 0x1f) as i32;
    let frac = (bits & 0x3ff) as f64;
    match exp {
        0 => sign * frac * 2f64.powi(-24),
        31 if frac == 0.0 => sign * f64::INFINITY,
        31 => f64::NAN,
        _ => sign * (1.0 + frac / 1024.0) * 2f64.powi(exp - 15),
    }
}

struct Weights<'a> {
    st: SafeTensors<'a>,
    prefix: &'static str,
    hasher: BTreeMap<String, Vec<u8>>,
}

impl Weights<'_> {
    fn values(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let full = format!("{}{name}", self.prefix);
        let view = self
            .st
            .tensor(&full)
            .map_err(|e| fmt_err(format!("tensor `{full}`: {e}")))?;
        if view.shape() != shape {
            return Err(fmt_err(format!(
                "tensor `{full}` has shape {:?}, expected {shape:?}",
                view.shape()
            )));
        }
        let bytes = view.data();
        let vals: Vec<f64> = match view.dtype() {
            Dtype::F32 => bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
            Dtype::F64 => bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
            Dtype::F16 => bytes
                .chunks_exact(2)
                .map(|b| f16_to_f64(u16::from_le_bytes([b[0], b[1]])))
                .collect(),
            Dtype::BF16 => bytes
                .chunks_exact(2)
                .map(|b| f32::from_bits(u32::from(u16::from_le_bytes([b[0], b[1]])) << 16) as f64)
                .collect(),
            other => return Err(fmt_err(format!("tensor `{full}` has unsupported dtype {other:?}"))),
        };
        self.hasher.insert(full, bytes.to_vec());
        Ok(vals)
    }

    fn mat(&mut self, name: &str, rows: usize, cols: usize) -> Result<Mat> {
        let v = self.values(name, &[rows, cols])?;
        Ok(Array2::from_shape_vec((rows, cols), v).unwrap())
    }

    fn vec(&mut self, name: &str, len: usize) -> Result<Array1<f64>> {
        Ok(Array1::from(self.values(name, &[len])?))
    }

    fn norm(&mut self, name: &str, len: usize) -> Result<(Array1<f64>, Array1<f64>)> {
        Ok((self.vec(&format!("{name}.weight"), len)?, self.vec(&format!("{name}.bias"), len)?))
    }
}

impl Gpt2Provider {
    pub fn load(dir: &Path) -> Result<Self> {
        let cfg: Gpt2Config = serde_json::from_slice(&read(&dir.join("config.json"))?)
            .map_err(|e| fmt_err(format!("config.json: {e}")))?;
        if cfg.n_head == 0 || !cfg.n_embd.is_multiple_of(cfg.n_head) {
            return Err(fmt_err("n_embd must be divisible by n_head"));
        }
        let vocab: HashMap<String, u32> = serde_json::from_slice(&read(&dir.join("vocab.json"))?)
            .map_err(|e| fmt_err(format!("vocab.json: {e}")))?;
        let merges = String::from_utf8(read(&dir.join("merges.txt"))?)
            .map_err(|e| fmt_err(format!("merges.txt: {e}")))?;
        let bpe = Bpe::new(vocab, &merges, cfg.vocab_size)?;

        let bytes = read(&dir.join("model.safetensors"))?;
        let st = SafeTensors::deserialize(&bytes).map_err(fmt_err)?;
        let prefix = if st.names().iter().any(|n| n.starts_with("transformer.")) {
            "transformer."
        } else {
            ""
        };
        let mut w = Weights {
            st,
            prefix,
            hasher: BTreeMap::new(),
        };
        let (d, v) = (cfg.n_embd, cfg.vocab_size);
        let wte = w.mat("wte.weight", v, d)?;
        let wpe = w.mat("wpe.weight", cfg.n_positions, d)?;
        let layers = (0..cfg.n_layer)
            .map(|i| {
                let p = format!("h.{i}");
                Ok(Layer {
                    ln1: w.norm(&format!("{p}.ln_1"), d)?,
                    attn_w: w.mat(&format!("{p}.attn.c_attn.weight"), d, 3 * d)?,
                    attn_b: w.vec(&format!("{p}.attn.c_attn.bias"), 3 * d)?,
                    proj_w: w.mat(&format!("{p}.attn.c_proj.weight"), d, d)?,
                    proj_b: w.vec(&format!("{p}.attn.c_proj.bias"), d)?,
                    ln2: w.norm(&format!("{p}.ln_2"), d)?,
                    fc_w: w.mat(&format!("{p}.mlp.c_fc.weight"), d, 4 * d)?,
                    fc_b: w.vec(&format!("{p}.mlp.c_fc.bias"), 4 * d)?,
                    out_w: w.mat(&format!("{p}.mlp.c_proj.weight"), 4 * d, d)?,
                    out_b: w.vec(&format!("{p}.mlp.c_proj.bias"), d)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ln_f = w.norm("ln_f", d)?;

        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, data) in &w.hasher {
            h.update(name.as_bytes());
            h.update(data);
        }
        Ok(Self {
            cfg,
            wte,
            wpe,
            layers,
            ln_f,
            bpe,
            checksum: hex(&h.finalize()),
            dir: dir.display().to_string(),
            truncations: AtomicUsize::new(0),
        })
    }

    fn layer_norm(&self, x: &Mat, (g, b): &(Array1<f64>, Array1<f64>)) -> Mat {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            let mean = row.mean().unwrap();
            let var = row.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            let inv = 1.0 / (var + self.cfg.layer_norm_epsilon).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            row *= g;
            row += b;
        }
        out
    }

    fn attention(&self, x: &Mat, l: &Layer) -> Mat {
        let (n, d) = x.dim();
        let heads = self.cfg.n_head;
        let hd = d / heads;
        let qkv = x.dot(&l.attn_w) + &l.attn_b;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut merged = Mat::zeros((n, d));
        for head in 0..heads {
            let q = qkv.slice(s![.., head * hd..(head + 1) * hd]);
            let k = qkv.slice(s![.., d + head * hd..d + (head + 1) * hd]);
            let v = qkv.slice(s![.., 2 * d + head * hd..2 * d + (head + 1) * hd]);
            let mut logits = q.dot(&k.t()) * scale;
            for (r, mut row) in logits.rows_mut().into_iter().enumerate() {
                let max = row.slice(s![..=r]).fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                let mut total = 0.0;
                for (c, x) in row.iter_mut().enumerate() {
                    *x = if c <= r { (*x - max).exp() } else { 0.0 };
                    total += *x;
                }
                row /= total;
            }
            merged
                .slice_mut(s![.., head * hd..(head + 1) * hd])
                .assign(&logits.dot(&v));
        }
        merged.dot(&l.proj_w) + &l.proj_b
    }

    fn forward(&self, ids: &[u32]) -> Mat {
        let d = self.cfg.n_embd;
        let mut x = Mat::from_shape_fn((ids.len(), d), |(r, c)| {
            self.wte[[ids[r] as usize, c]] + self.wpe[[r, c]]
        });
        for l in &self.layers {
            x = &x + &self.attention(&self.layer_norm(&x, &l.ln1), l);
            let m = self.layer_norm(&x, &l.ln2).dot(&l.fc_w) + &l.fc_b;
            let m = m.mapv(gelu_new);
            x = &x + &(m.dot(&l.out_w) + &l.out_b);
        }
        self.layer_norm(&x, &self.ln_f)
    }
}

fn gelu_new(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

impl FrozenLmProvider for Gpt2Provider {
    fn describe(&self) -> String {
        format!(
            "gpt2({}, layers={}, width={})",
            self.dir, self.cfg.n_layer, self.cfg.n_embd
        )
    }

    fn vocab_size(&self) -> usize {
        self.cfg.vocab_size
    }

    fn embed_width(&self) -> usize {
        self.cfg.n_embd
    }

    fn context_limit(&self) -> usize {
        self.cfg.n_positions
    }

    fn word_embeddings(&self) -> &Mat {
        &self.wte
    }

    fn encode_text(&self, text: &str) -> Vec<u32> {
        self.bpe.encode(text)
    }

    fn decode(&self, ids: &[u32]) -> Option<String> {
        self.bpe.decode(ids)
    }

    fn hidden_states(&self, ids: &[u32]) -> Mat {
        // Positions beyond the table cannot be embedded; callers tokenize
        // through the truncating path first.
        let n = ids.len().min(self.cfg.n_positions);
        self.forward(&ids[..n])
    }

    fn record_truncation(&self) {
        self.truncations.fetch_add(1, Ordering::Relaxed);
    }

    fn truncation_warnings(&self) -> usize {
        self.truncations.load(Ordering::Relaxed)
    }

    fn checksum(&self) -> String {
        self.checksum.clone()
    }
}

/// The reversible byte → printable-character table used by byte-level BPE.
fn byte_symbols() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut extra = 0u32;
    for b in 0..=255u8 {
        let printable = (b'!'..=b'~').contains(&b) || (0xa1..=0xac).contains(&b) || b >= 0xae;
        table[b as usize] = if printable {
            char::from(b)
        } else {
            extra += 1;
            char::from_u32(255 + extra).unwrap()
        };
    }
    table
}

struct Bpe {
    encoder: HashMap<String, u32>,
    decoder: HashMap<u32, String>,
    ranks: HashMap<(String, String), usize>,
    symbols: [char; 256],
    unsymbol: HashMap<char, u8>,
    pattern: Regex,
}

impl Bpe {
    fn new(encoder: HashMap<String, u32>, merges: &str, vocab_size: usize) -> Result<Self> {
        let symbols = byte_symbols();
        if let Some(c) = symbols.iter().find(|c| !encoder.contains_key(&c.to_string())) {
            return Err(fmt_err(format!("vocab.json lacks byte symbol {c:?}")));
        }
        if let Some((tok, id)) = encoder.iter().find(|(_, &id)| id as usize >= vocab_size) {
            return Err(fmt_err(format!("token {tok:?} has id {id} ≥ vocab_size {vocab_size}")));
        }
        let ranks = merges
            .lines()
            .filter(|l| !l.starts_with("#version") && !l.trim().is_empty())
            .enumerate()
            .map(|(rank, line)| {
                let mut it = line.split(' ');
                match (it.next(), it.next()) {
                    (Some(a), Some(b)) => Ok(((a.to_string(), b.to_string()), rank)),
                    _ => Err(fmt_err(format!("malformed merge line {line:?}"))),
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            decoder: encoder.iter().map(|(k, &v)| (v, k.clone())).collect(),
            encoder,
            ranks,
            unsymbol: symbols.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect(),
            symbols,
            pattern: Regex::new(r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+")
                .unwrap(),
        })
    }

    /// GPT-2 pre-tokenization. A whitespace run followed by a non-space
    /// character leaves its last character to prefix the next piece.
    fn pieces<'t>(&self, text: &'t str) -> Vec<&'t str> {
        let mut out = Vec::new();
        let mut at = 0;
        while let Some(m) = self.pattern.find_at(text, at) {
            let mut end = m.end();
            let piece = m.as_str();
            if piece.chars().all(char::is_whitespace) && end < text.len() {
                let last = piece.chars().last().unwrap();
                if piece.chars().count() > 1 {
                    end -= last.len_utf8();
                }
            }
            out.push(&text[m.start()..end]);
            at = end;
        }
        out
    }

    fn merge(&self, piece: &str) -> Vec<String> {
        let mut word: Vec<String> = piece
            .bytes()
            .map(|b| self.symbols[b as usize].to_string())
            .collect();
        loop {
            let best = word
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, w)))
                .min_by_key(|(r, _)| *r)
                .map(|(_, w)| (w[0].clone(), w[1].clone()));
            let Some((a, b)) = best else { break };
            let mut next = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == a && word[i + 1] == b {
                    next.push(format!("{a}{b}"));
                    i += 2;
                } else {
                    next.push(word[i].clone());
                    i += 1;
                }
            }
            word = next;
        }
        word
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for piece in self.pieces(text) {
            for tok in self.merge(piece) {
                match self.encoder.get(&tok) {
                    Some(&id) => ids.push(id),
                    // A merge product missing from the vocabulary: fall back
                    // to its byte symbols, which are always present.
                    None => ids.extend(tok.chars().map(|c| self.encoder[&c.to_string()])),
                }
            }
        }
        ids
    }

    fn decode(&self, ids: &[u32]) -> Option<String> {
        let mut bytes = Vec::new();
        for id in ids {
            for c in self.decoder.get(id)?.chars() {
                bytes.push(*self.unsymbol.get(&c)?);
            }
        }
        String::from_utf8(bytes).ok()
    }
}
