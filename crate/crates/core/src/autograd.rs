//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse from a `1×1` loss. Parameters live in a
//! [`ParamStore`] and enter the tape once each.

use std::collections::{BTreeMap, HashMap};

use ndarray::{concatenate, s, Array2, Axis};
use sha2::{Digest, Sha256};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable arrays, iterated in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    lookup: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Mat> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn total_size(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (_, name, v) in self.iter() {
            h.update(name.as_bytes());
            h.update((v.nrows() as u64).to_le_bytes());
            h.update((v.ncols() as u64).to_le_bytes());
            for x in v.iter() {
                h.update(x.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a (r×c) + row (1×c)`
    AddRow(Var, Var),
    /// `a (r×c) ⊙ row (1×c)`
    MulRow(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    /// Row-wise standardization; stores `1/σ` per row.
    LayerNorm(Var, Vec<f64>),
    Gelu(Var),
    Abs(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    MeanRows(Var),
    MeanAll(Var),
    Reshape(Var),
    Sum(Vec<Var>),
    /// Row-wise mean, giving `r×1`.
    MeanCols(Var),
    /// Softmax attention weights within consecutive row groups.
    GroupScores(Var, Var, usize, f64),
    /// Weights (`n×g`) applied to the values of each row group.
    GroupApply(Var, Var, usize),
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// Gradients from one backward pass.
pub struct Gradients {
    nodes: Vec<Option<Mat>>,
    params: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient of a leaf created with [`Tape::input`].
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.nodes[v.0].as_ref()
    }

    /// `None` when the parameter took no part in the loss.
    pub fn param(&self, id: ParamId) -> Option<&Mat> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    pub fn params(&self) -> &[Option<Mat>] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Option<Mat>> {
        self.params
    }
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

const LN_EPS: f64 = 1e-5;

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    /// Value that carries no gradient.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked (used by gradient checks).
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let value = self.params.get(id).clone();
        let v = self.push(value, Op::Param, true);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.nrows(), "matmul shape mismatch {:?} x {:?}", va.dim(), vb.dim());
        let out = va.dot(vb);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        let ng = self.ng(a);
        self.push(out, Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shape mismatch");
        let out = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "sub shape mismatch");
        let out = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul shape mismatch");
        let out = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!(vr.nrows(), 1);
        assert_eq!(va.ncols(), vr.ncols(), "add_row width mismatch");
        let out = va + vr;
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!(vr.nrows(), 1);
        assert_eq!(va.ncols(), vr.ncols(), "mul_row width mismatch");
        let out = va * vr;
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::MulRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) * k;
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, k), ng)
    }

    /// Row-wise softmax. `-inf` entries get exactly zero weight.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        let ng = self.ng(a);
        self.push(out, Op::Softmax(a), ng)
    }

    pub fn layer_norm(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let n = va.ncols() as f64;
        let mut out = va.clone();
        let mut inv = Vec::with_capacity(va.nrows());
        for mut row in out.rows_mut() {
            let m = row.sum() / n;
            let var = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            let r = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|x| (x - m) * r);
            inv.push(r);
        }
        let ng = self.ng(a);
        self.push(out, Op::LayerNorm(a, inv), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu);
        let ng = self.ng(a);
        self.push(out, Op::Gelu(a), ng)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::abs);
        let ng = self.ng(a);
        self.push(out, Op::Abs(a), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&v| self.value(v).view()).collect();
        let out = concatenate(Axis(0), &views).expect("concat_rows width mismatch");
        let ng = parts.iter().any(|&v| self.ng(v));
        self.push(out, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&v| self.value(v).view()).collect();
        let out = concatenate(Axis(1), &views).expect("concat_cols height mismatch");
        let ng = parts.iter().any(|&v| self.ng(v));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let ng = self.ng(a);
        self.push(out, Op::SliceRows(a, start), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        let ng = self.ng(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    /// Mean over rows, giving `1×c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
        let ng = self.ng(a);
        self.push(out, Op::MeanRows(a), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).mean().unwrap_or(0.0));
        let ng = self.ng(a);
        self.push(out, Op::MeanAll(a), ng)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.len(), rows * cols, "reshape size mismatch");
        let data: Vec<f64> = va.iter().cloned().collect();
        let out = Array2::from_shape_vec((rows, cols), data).unwrap();
        let ng = self.ng(a);
        self.push(out, Op::Reshape(a), ng)
    }

    pub fn mean_cols(&mut self, a: Var) -> Var {
        let out = self.value(a).mean_axis(Axis(1)).unwrap().insert_axis(Axis(1));
        let ng = self.ng(a);
        self.push(out, Op::MeanCols(a), ng)
    }

    /// Attention weights `softmax(scale · q kᵀ)` computed independently within
    /// each block of `group` consecutive rows. Returns `n × group`; row `i`
    /// holds its weights over the rows of its own block.
    pub fn group_scores(&mut self, q: Var, k: Var, group: usize, scale: f64) -> Var {
        let (vq, vk) = (self.value(q), self.value(k));
        let (n, d) = vq.dim();
        assert_eq!(vk.dim(), (n, d), "group_scores shape mismatch");
        assert!(group > 0 && n % group == 0, "rows must split into groups of {group}");
        let mut out = Array2::zeros((n, group));
        for r in 0..n {
            let base = r / group * group;
            let mut m = f64::NEG_INFINITY;
            for j in 0..group {
                let mut dot = 0.0;
                for c in 0..d {
                    dot += vq[[r, c]] * vk[[base + j, c]];
                }
                out[[r, j]] = dot * scale;
                m = m.max(out[[r, j]]);
            }
            let mut z = 0.0;
            for j in 0..group {
                out[[r, j]] = (out[[r, j]] - m).exp();
                z += out[[r, j]];
            }
            for j in 0..group {
                out[[r, j]] /= z;
            }
        }
        let ng = self.ng(q) || self.ng(k);
        self.push(out, Op::GroupScores(q, k, group, scale), ng)
    }

    /// `out_i = Σ_j w_ij v_(block(i)+j)`.
    pub fn group_apply(&mut self, w: Var, v: Var, group: usize) -> Var {
        let (vw, vv) = (self.value(w), self.value(v));
        let (n, d) = vv.dim();
        assert_eq!(vw.dim(), (n, group), "group_apply shape mismatch");
        let mut out = Array2::zeros((n, d));
        for r in 0..n {
            let base = r / group * group;
            for j in 0..group {
                let wij = vw[[r, j]];
                for c in 0..d {
                    out[[r, c]] += wij * vv[[base + j, c]];
                }
            }
        }
        let ng = self.ng(w) || self.ng(v);
        self.push(out, Op::GroupApply(w, v, group), ng)
    }

    pub fn sum(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let mut out = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            out += self.value(p);
        }
        let ng = parts.iter().any(|&v| self.ng(v));
        self.push(out, Op::Sum(parts.to_vec()), ng)
    }

    /// Mean absolute difference against a constant target.
    pub fn mae(&mut self, a: Var, target: &Mat) -> Var {
        let t = self.constant(target.clone());
        let d = self.sub(a, t);
        let d = self.abs(d);
        self.mean_all(d)
    }

    /// `x W + b` for a `1×out` bias.
    pub fn affine(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    /// Gradients of the `1×1` node `loss` with respect to every tracked node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "loss must be 1×1");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Mat>> = vec![None; n];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(x) => *x += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let ng = |v: Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Leaf | Op::Param => unreachable!(),
                Op::MatMul(a, b) => {
                    if ng(*a) {
                        acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    }
                    if ng(*b) {
                        acc(&mut grads, *b, self.value(*a).t().dot(&g));
                    }
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    if ng(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if ng(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if ng(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if ng(*b) {
                        acc(&mut grads, *b, -g);
                    }
                }
                Op::Mul(a, b) => {
                    if ng(*a) {
                        acc(&mut grads, *a, &g * self.value(*b));
                    }
                    if ng(*b) {
                        acc(&mut grads, *b, &g * self.value(*a));
                    }
                }
                Op::AddRow(a, r) => {
                    if ng(*r) {
                        acc(&mut grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if ng(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::MulRow(a, r) => {
                    if ng(*r) {
                        let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                        acc(&mut grads, *r, gr);
                    }
                    if ng(*a) {
                        acc(&mut grads, *a, &g * self.value(*r));
                    }
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g * *k),
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut ga = &g * y;
                    for (mut row, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot = row.sum();
                        row.zip_mut_with(&yrow, |r, &yv| *r -= yv * dot);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm(a, inv) => {
                    let y = &node.value;
                    let n = y.ncols() as f64;
                    let mut ga = g.clone();
                    for (r, (mut row, yrow)) in ga.rows_mut().into_iter().zip(y.rows()).enumerate() {
                        let mean_g = row.sum() / n;
                        let mean_gy = row.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                        let k = inv[r];
                        row.zip_mut_with(&yrow, |gv, &yv| *gv = k * (*gv - mean_g - yv * mean_gy));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, &g * &x.mapv(gelu_grad));
                }
                Op::Abs(a) => {
                    let x = self.value(*a);
                    let sign = x.mapv(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 });
                    acc(&mut grads, *a, &g * &sign);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let r = self.value(p).nrows();
                        if ng(p) {
                            acc(&mut grads, p, g.slice(s![off..off + r, ..]).to_owned());
                        }
                        off += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let c = self.value(p).ncols();
                        if ng(p) {
                            acc(&mut grads, p, g.slice(s![.., off..off + c]).to_owned());
                        }
                        off += c;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut full = Array2::zeros(self.value(*a).dim());
                    full.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *a, full);
                }
                Op::SliceCols(a, start) => {
                    let mut full = Array2::zeros(self.value(*a).dim());
                    full.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, full);
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.value(*a).dim();
                    let row = &g / r as f64;
                    acc(&mut grads, *a, row.broadcast((r, c)).unwrap().to_owned());
                }
                Op::MeanAll(a) => {
                    let dim = self.value(*a).dim();
                    let k = g[[0, 0]] / (dim.0 * dim.1).max(1) as f64;
                    acc(&mut grads, *a, Array2::from_elem(dim, k));
                }
                Op::Reshape(a) => {
                    let dim = self.value(*a).dim();
                    let data: Vec<f64> = g.iter().cloned().collect();
                    acc(&mut grads, *a, Array2::from_shape_vec(dim, data).unwrap());
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        if ng(p) {
                            acc(&mut grads, p, g.clone());
                        }
                    }
                }
                Op::MeanCols(a) => {
                    let (r, c) = self.value(*a).dim();
                    let col = &g / c as f64;
                    acc(&mut grads, *a, col.broadcast((r, c)).unwrap().to_owned());
                }
                Op::GroupScores(q, k, group, scale) => {
                    let (vq, vk, w) = (self.value(*q), self.value(*k), &node.value);
                    let (n, d) = vq.dim();
                    let mut gq = Array2::zeros((n, d));
                    let mut gk = Array2::zeros((n, d));
                    for r in 0..n {
                        let base = r / group * group;
                        let dot: f64 = (0..*group).map(|j| g[[r, j]] * w[[r, j]]).sum();
                        for j in 0..*group {
                            let dl = w[[r, j]] * (g[[r, j]] - dot) * scale;
                            for c in 0..d {
                                gq[[r, c]] += dl * vk[[base + j, c]];
                                gk[[base + j, c]] += dl * vq[[r, c]];
                            }
                        }
                    }
                    if ng(*q) {
                        acc(&mut grads, *q, gq);
                    }
                    if ng(*k) {
                        acc(&mut grads, *k, gk);
                    }
                }
                Op::GroupApply(w, v, group) => {
                    let (vw, vv) = (self.value(*w), self.value(*v));
                    let (n, d) = vv.dim();
                    let mut gw = Array2::zeros((n, *group));
                    let mut gv = Array2::zeros((n, d));
                    for r in 0..n {
                        let base = r / group * group;
                        for j in 0..*group {
                            let mut s = 0.0;
                            for c in 0..d {
                                s += g[[r, c]] * vv[[base + j, c]];
                                gv[[base + j, c]] += vw[[r, j]] * g[[r, c]];
                            }
                            gw[[r, j]] = s;
                        }
                    }
                    if ng(*w) {
                        acc(&mut grads, *w, gw);
                    }
                    if ng(*v) {
                        acc(&mut grads, *v, gv);
                    }
                }
            }
        }

        let mut params = vec![None; self.params.len()];
        for (id, v) in &self.param_vars {
            params[id.0] = grads[v.0].clone();
        }
        Gradients {
            nodes: grads,
            params,
        }
    }
}

/// Adam with constant learning rate.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Mat> = params.iter().map(|(_, _, p)| Array2::zeros(p.dim())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Parameters with no gradient are left untouched, moments included.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Mat>]) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let (b1, b2) = (self.beta1, self.beta2);
            self.m[i].zip_mut_with(g, |m, &gv| *m = b1 * *m + (1.0 - b1) * gv);
            self.v[i].zip_mut_with(g, |v, &gv| *v = b2 * *v + (1.0 - b2) * gv * gv);
            let p = params.get_mut(ParamId(i));
            let (lr, eps) = (self.lr, self.eps);
            ndarray::Zip::from(p)
                .and(&self.m[i])
                .and(&self.v[i])
                .for_each(|p, &m, &v| *p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps));
        }
    }
}

#[cfg(test)]
pub(crate) mod gradcheck {
    use super::*;

    /// Max relative error between analytic and central-difference gradients
    /// of `f` with respect to the listed parameters. The relative error of a
    /// whole gradient array is `|g − ĝ|∞ / max(|g|∞, |ĝ|∞, 1e-5)`.
    pub fn check_params(
        params: &ParamStore,
        ids: &[ParamId],
        f: &dyn Fn(&mut Tape) -> Var,
        h: f64,
    ) -> f64 {
        let tape_grads = {
            let mut tape = Tape::new(params);
            let loss = f(&mut tape);
            tape.backward(loss).into_params()
        };
        let mut worst: f64 = 0.0;
        for &id in ids {
            let analytic = tape_grads[id.0].clone().unwrap_or_else(|| Array2::zeros(params.get(id).dim()));
            let mut numeric = Array2::zeros(analytic.dim());
            for idx in 0..analytic.len() {
                let eval = |delta: f64| {
                    let mut p = params.clone();
                    let m = p.get_mut(id);
                    let r = idx / m.ncols();
                    let c = idx % m.ncols();
                    m[[r, c]] += delta;
                    let mut tape = Tape::new(&p);
                    let l = f(&mut tape);
                    tape.scalar(l)
                };
                let (r, c) = (idx / analytic.ncols(), idx % analytic.ncols());
                numeric[[r, c]] = (eval(h) - eval(-h)) / (2.0 * h);
            }
            let err = rel_err(&analytic, &numeric);
            if err > 1e-6 {
                eprintln!(
                    "gradcheck: `{}` relative error {err:.3e} (|g|∞ = {:.3e})",
                    params.name(id),
                    analytic.iter().fold(0.0f64, |m, x| m.max(x.abs()))
                );
            }
            worst = worst.max(err);
        }
        worst
    }

    /// The floor keeps arrays whose exact gradient is identically zero
    /// (e.g. attention key biases, which softmax cancels) from dividing
    /// finite-difference round-off (~1e-10) by zero.
    pub fn rel_err(a: &Mat, b: &Mat) -> f64 {
        let diff = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let scale = a
            .iter()
            .chain(b.iter())
            .map(|x| x.abs())
            .fold(0.0, f64::max)
            .max(1e-5);
        diff / scale
    }
}
