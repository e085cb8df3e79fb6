//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] borrows a [`ParamStore`] immutably, records every operation
//! applied to its variables, and [`Graph::backward`] walks the tape in reverse
//! to produce [`Gradients`]. Gradients are then applied to the store by an
//! optimizer once the graph is dropped.

use std::collections::HashMap;

use crate::{NnError, ParamId, ParamStore, Real, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Query rows `q_start..q_start + q_len` attend to key rows
/// `k_start..k_start + k_len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnSegment {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
}

impl AttnSegment {
    /// Self-attention within rows `start..start + len`.
    pub fn square(start: usize, len: usize) -> Self {
        AttnSegment {
            q_start: start,
            q_len: len,
            k_start: start,
            k_len: len,
        }
    }
}

/// Target marking a cross-entropy cell that does not contribute.
pub const IGNORE: u32 = u32::MAX;

enum Stored<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

enum Op<T> {
    Constant,
    Input,
    Param,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ScaleRows(Var, Vec<T>),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Relu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    SliceCols { a: Var, start: usize },
    SliceRows { a: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows { table: Var, idx: Vec<usize> },
    EmbeddingBag { table: Var, idx: Vec<usize>, k: usize },
    BlendRows { z: Var, v: Var, mask: Vec<bool> },
    Attention { q: Var, k: Var, v: Var, heads: usize, segs: Vec<AttnSegment>, probs: Vec<T> },
    SegmentedCe { logits: Var, segs: Vec<(usize, usize)>, targets: Vec<u32>, probs: Vec<T> },
    Sum(Var),
    SquaredError(Var, Var),
    KlNormal { mu: Var, logvar: Var },
}

struct Node<T> {
    value: Stored<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<'s, T: Real> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, Var>,
    checked: bool,
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    params: Vec<Option<Tensor<T>>>,
    inputs: HashMap<usize, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    pub fn input(&self, v: Var) -> Option<&Tensor<T>> {
        self.inputs.get(&v.0)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    /// Global L2 norm over all parameter gradients.
    pub fn norm(&self) -> T {
        self.params()
            .flat_map(|(_, g)| g.data().iter())
            .fold(T::zero(), |acc, &x| acc + x * x)
            .sqrt()
    }

    pub fn scale(&mut self, s: T) {
        for g in self.params.iter_mut().flatten() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }

    /// Add another set of gradients (e.g. from a second loss) into this one.
    pub fn merge(&mut self, other: Gradients<T>) {
        if self.params.len() < other.params.len() {
            self.params.resize_with(other.params.len(), || None);
        }
        for (slot, g) in self.params.iter_mut().zip(other.params) {
            match (slot.as_mut(), g) {
                (Some(a), Some(b)) => a.add_assign(&b),
                (None, Some(b)) => *slot = Some(b),
                _ => {}
            }
        }
    }
}

fn mismatch(op: &'static str, left: (usize, usize), right: (usize, usize)) -> NnError {
    NnError::ShapeMismatch { op, left, right }
}

/// Strided matrix view over a slice.
#[derive(Clone, Copy)]
struct View<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a, T: Real> View<'a, T> {
    fn of(t: &'a Tensor<T>) -> Self {
        View {
            data: t.data(),
            rows: t.rows(),
            cols: t.cols(),
            rs: t.cols() as isize,
            cs: 1,
        }
    }

    fn t(self) -> Self {
        View {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn t_if(self, flag: bool) -> Self {
        if flag {
            self.t()
        } else {
            self
        }
    }
}

/// `out (+)= a * b` where `out` is a strided row-major destination.
#[allow(clippy::too_many_arguments)]
fn gemm_into<T: Real>(a: View<T>, b: View<T>, alpha: T, beta: T, out: &mut [T], rs: isize, cs: isize) {
    debug_assert_eq!(a.cols, b.rows);
    T::gemm(a.rows, a.cols, b.cols, alpha, a.data, a.rs, a.cs, b.data, b.rs, b.cs, beta, out, rs, cs);
}

fn mm<T: Real>(a: View<T>, b: View<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(a.rows, b.cols);
    let n = b.cols as isize;
    gemm_into(a, b, T::one(), T::zero(), out.data_mut(), n, 1);
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let du = c * (T::one() + three * a * x * x);
    half * (T::one() + th) + half * x * (T::one() - th * th) * du
}

/// Softmax over `row` in place; `-inf` entries get probability 0.
/// Probabilities below `eps^4` are flushed to zero. They carry no useful
/// mass, and once scaled by a loss weight they turn subnormal, which makes
/// every later multiply against them very slow.
fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let tiny = T::epsilon().powi(4);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
        if *x < tiny {
            *x = T::zero();
        }
    }
}

impl<'s, T: Real> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            checked: true,
        }
    }

    /// In checked mode every op output is tested for NaN/Inf.
    pub fn set_checked(&mut self, checked: bool) {
        self.checked = checked;
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Stored::Owned(t) => t,
            Stored::Param(id) => self.store.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Result<Var, NnError> {
        if self.checked && !value.is_finite() {
            return Err(NnError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value: Stored::Owned(value),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Stored::Param(id),
            op: Op::Param,
            needs_grad: !self.store.is_frozen(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Stored::Owned(t),
            op: Op::Constant,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is reported by [`Gradients::input`].
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Stored::Owned(t),
            op: Op::Input,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Cut the gradient path: a constant copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) * op(b)` where `op` transposes when the flag is set.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var, NnError> {
        let va = View::of(self.value(a)).t_if(ta);
        let vb = View::of(self.value(b)).t_if(tb);
        if va.cols != vb.rows {
            return Err(mismatch("matmul", (va.rows, va.cols), (vb.rows, vb.cols)));
        }
        let out = mm(va, vb);
        let needs = self.needs(a) || self.needs(b);
        self.push("matmul", out, Op::MatMul { a, b, ta, tb }, needs)
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_vec(ta.rows(), ta.cols(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.zip("add", a, b, |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        self.push("add", out, Op::Add(a, b), needs)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.zip("sub", a, b, |x, y| x - y)?;
        let needs = self.needs(a) || self.needs(b);
        self.push("sub", out, Op::Sub(a, b), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.zip("mul", a, b, |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        self.push("mul", out, Op::Mul(a, b), needs)
    }

    /// `a + row`, broadcasting a `1 x n` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NnError> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(mismatch("add_row", ta.shape(), tr.shape()));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for (x, &b) in out.row_mut(r).iter_mut().zip(tr.data()) {
                *x += b;
            }
        }
        let needs = self.needs(a) || self.needs(row);
        self.push("add_row", out, Op::AddRow(a, row), needs)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var, NnError> {
        let out = self.value(a).map(|x| x * s);
        let needs = self.needs(a);
        self.push("scale", out, Op::Scale(a, s), needs)
    }

    /// Multiply row `i` of `a` by the constant `s[i]`.
    pub fn scale_rows(&mut self, a: Var, s: Vec<T>) -> Result<Var, NnError> {
        let ta = self.value(a);
        if s.len() != ta.rows() {
            return Err(mismatch("scale_rows", ta.shape(), (s.len(), 1)));
        }
        let mut out = ta.clone();
        for (r, &k) in s.iter().enumerate() {
            for x in out.row_mut(r) {
                *x *= k;
            }
        }
        let needs = self.needs(a);
        self.push("scale_rows", out, Op::ScaleRows(a, s), needs)
    }

    // ---- elementwise nonlinearities ----

    pub fn gelu(&mut self, a: Var) -> Result<Var, NnError> {
        let out = self.value(a).map(gelu);
        let needs = self.needs(a);
        self.push("gelu", out, Op::Gelu(a), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NnError> {
        let out = self.value(a).map(T::tanh);
        let needs = self.needs(a);
        self.push("tanh", out, Op::Tanh(a), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NnError> {
        let out = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        let needs = self.needs(a);
        self.push("sigmoid", out, Op::Sigmoid(a), needs)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NnError> {
        let out = self.value(a).map(T::exp);
        let needs = self.needs(a);
        self.push("exp", out, Op::Exp(a), needs)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NnError> {
        let out = self.value(a).map(|x| x.max(T::zero()));
        let needs = self.needs(a);
        self.push("relu", out, Op::Relu(a), needs)
    }

    // ---- normalization ----

    /// Row-wise layer normalization with a learned `1 x n` scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, NnError> {
        let tx = self.value(x);
        let (rows, cols) = tx.shape();
        for p in [gamma, beta] {
            if self.value(p).shape() != (1, cols) {
                return Err(mismatch("layer_norm", (rows, cols), self.value(p).shape()));
            }
        }
        let eps = T::from_f64_lossy(eps);
        let n = T::from_usize(cols).unwrap();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = Tensor::zeros(rows, cols);
        let mut xhat = vec![T::zero(); rows * cols];
        let mut rstd = vec![T::zero(); rows];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / n;
            let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            let o = out.row_mut(r);
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                o[c] = h * g[c] + b[c];
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push("layer_norm", out, Op::LayerNorm { x, gamma, beta, xhat, rstd }, needs)
    }

    // ---- shape manipulation ----

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let ta = self.value(a);
        if start + len > ta.cols() {
            return Err(mismatch("slice_cols", ta.shape(), (start, len)));
        }
        let mut out = Tensor::zeros(ta.rows(), len);
        for r in 0..ta.rows() {
            out.row_mut(r).copy_from_slice(&ta.row(r)[start..start + len]);
        }
        let needs = self.needs(a);
        self.push("slice_cols", out, Op::SliceCols { a, start }, needs)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let ta = self.value(a);
        if start + len > ta.rows() {
            return Err(mismatch("slice_rows", ta.shape(), (start, len)));
        }
        let out = ta.slice_rows(start, len);
        let needs = self.needs(a);
        self.push("slice_rows", out, Op::SliceRows { a, start }, needs)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        let mut cols = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(mismatch("concat_cols", (rows, cols), self.value(p).shape()));
            }
            cols += self.value(p).cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[off..off + t.cols()].copy_from_slice(t.row(r));
            }
            off += t.cols();
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), needs)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(mismatch("concat_rows", (rows, cols), t.shape()));
            }
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push("concat_rows", Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), needs)
    }

    /// Row `i` of the output is `table[idx[i]]`.
    pub fn gather_rows(&mut self, table: Var, idx: Vec<usize>) -> Result<Var, NnError> {
        let t = self.value(table);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(NnError::InvalidArgument(format!(
                "gather index {bad} out of range for {} rows",
                t.rows()
            )));
        }
        let mut out = Tensor::zeros(idx.len(), t.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        let needs = self.needs(table);
        self.push("gather_rows", out, Op::GatherRows { table, idx }, needs)
    }

    /// Row `i` of the output is `sum_j table[idx[i * k + j]]`.
    pub fn embedding_bag(&mut self, table: Var, idx: Vec<usize>, k: usize) -> Result<Var, NnError> {
        let t = self.value(table);
        if k == 0 || idx.len() % k != 0 {
            return Err(NnError::InvalidArgument(format!("{} indices do not form bags of {k}", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(NnError::InvalidArgument(format!(
                "bag index {bad} out of range for {} rows",
                t.rows()
            )));
        }
        let rows = idx.len() / k;
        let mut out = Tensor::zeros(rows, t.cols());
        for r in 0..rows {
            let o = out.row_mut(r);
            for &i in &idx[r * k..(r + 1) * k] {
                for (x, &w) in o.iter_mut().zip(t.row(i)) {
                    *x += w;
                }
            }
        }
        let needs = self.needs(table);
        self.push("embedding_bag", out, Op::EmbeddingBag { table, idx, k }, needs)
    }

    /// Row `i` is `v` (a `1 x n` row) where `mask[i]`, else `z`'s row `i`.
    pub fn blend_rows(&mut self, z: Var, v: Var, mask: Vec<bool>) -> Result<Var, NnError> {
        let (tz, tv) = (self.value(z), self.value(v));
        if tv.rows() != 1 || tv.cols() != tz.cols() || mask.len() != tz.rows() {
            return Err(mismatch("blend_rows", tz.shape(), tv.shape()));
        }
        let mut out = tz.clone();
        for (r, &m) in mask.iter().enumerate() {
            if m {
                out.row_mut(r).copy_from_slice(tv.data());
            }
        }
        let needs = self.needs(z) || self.needs(v);
        self.push("blend_rows", out, Op::BlendRows { z, v, mask }, needs)
    }

    // ---- attention ----

    /// Multi-head scaled dot-product attention over row segments. `q`, `k`
    /// and `v` are already projected; heads split the columns evenly. With
    /// `causal`, query `i` of a segment sees keys `0..=i` of that segment.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segs: &[AttnSegment],
        causal: bool,
    ) -> Result<Var, NnError> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let d = tq.cols();
        if heads == 0 || d % heads != 0 || tk.cols() != d || tv.shape() != tk.shape() {
            return Err(mismatch("attention", tq.shape(), tk.shape()));
        }
        for s in segs {
            if s.q_start + s.q_len > tq.rows() || s.k_start + s.k_len > tk.rows() || (causal && s.q_len != s.k_len) {
                return Err(NnError::InvalidArgument(format!("bad attention segment {s:?}")));
            }
        }
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let mut out = Tensor::zeros(tq.rows(), d);
        let total: usize = segs.iter().map(|s| s.q_len * s.k_len).sum::<usize>() * heads;
        let mut probs = Vec::with_capacity(total);
        for s in segs {
            for h in 0..heads {
                let (qn, kn) = (s.q_len, s.k_len);
                let mut p = vec![T::zero(); qn * kn];
                let qv = View {
                    data: &tq.data()[s.q_start * d + h * dh..],
                    rows: qn,
                    cols: dh,
                    rs: d as isize,
                    cs: 1,
                };
                let kv = View {
                    data: &tk.data()[s.k_start * d + h * dh..],
                    rows: kn,
                    cols: dh,
                    rs: d as isize,
                    cs: 1,
                };
                gemm_into(qv, kv.t(), scale, T::zero(), &mut p, kn as isize, 1);
                for i in 0..qn {
                    let row = &mut p[i * kn..(i + 1) * kn];
                    if causal {
                        for x in &mut row[i + 1..] {
                            *x = T::neg_infinity();
                        }
                    }
                    softmax_in_place(row);
                }
                let vv = View {
                    data: &tv.data()[s.k_start * d + h * dh..],
                    rows: kn,
                    cols: dh,
                    rs: d as isize,
                    cs: 1,
                };
                let pv = View {
                    data: &p,
                    rows: qn,
                    cols: kn,
                    rs: kn as isize,
                    cs: 1,
                };
                let off = s.q_start * d + h * dh;
                gemm_into(pv, vv, T::one(), T::zero(), &mut out.data_mut()[off..], d as isize, 1);
                probs.extend_from_slice(&p);
            }
        }
        let needs = self.needs(q) || self.needs(k) || self.needs(v);
        let segs = segs.to_vec();
        self.push("attention", out, Op::Attention { q, k, v, heads, segs, probs }, needs)
    }

    // ---- losses (all return 1 x 1 sums) ----

    /// Sum of softmax cross-entropies over column segments. `targets` has one
    /// entry per (row, segment), indexing within the segment; [`IGNORE`]
    /// skips a cell.
    pub fn segmented_cross_entropy(
        &mut self,
        logits: Var,
        segs: &[(usize, usize)],
        targets: Vec<u32>,
    ) -> Result<Var, NnError> {
        let t = self.value(logits);
        let (rows, cols) = t.shape();
        if targets.len() != rows * segs.len() {
            return Err(mismatch("cross_entropy", (rows, segs.len()), (targets.len(), 1)));
        }
        for (k, &(start, len)) in segs.iter().enumerate() {
            if start + len > cols || len == 0 {
                return Err(NnError::InvalidArgument(format!("segment {k} ({start}, {len}) exceeds {cols} columns")));
            }
            for r in 0..rows {
                let tg = targets[r * segs.len() + k];
                if tg != IGNORE && tg as usize >= len {
                    return Err(NnError::InvalidArgument(format!("target {tg} outside segment of {len}")));
                }
            }
        }
        let mut probs = vec![T::zero(); rows * cols];
        let mut loss = T::zero();
        for r in 0..rows {
            let row = t.row(r);
            for (k, &(start, len)) in segs.iter().enumerate() {
                let tg = targets[r * segs.len() + k];
                if tg == IGNORE {
                    continue;
                }
                let p = &mut probs[r * cols + start..r * cols + start + len];
                p.copy_from_slice(&row[start..start + len]);
                let max = p.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
                let lse = max + p.iter().fold(T::zero(), |a, &x| a + (x - max).exp()).ln();
                loss += lse - row[start + tg as usize];
                softmax_in_place(p);
            }
        }
        let needs = self.needs(logits);
        let segs = segs.to_vec();
        self.push("cross_entropy", Tensor::scalar(loss), Op::SegmentedCe { logits, segs, targets, probs }, needs)
    }

    /// Cross-entropy over full rows, summed.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NnError> {
        let cols = self.value(logits).cols();
        let targets = targets.iter().map(|&t| t as u32).collect();
        self.segmented_cross_entropy(logits, &[(0, cols)], targets)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NnError> {
        let s = self.value(a).sum();
        let needs = self.needs(a);
        self.push("sum", Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NnError> {
        let n = self.value(a).len().max(1);
        let s = self.sum(a)?;
        self.scale(s, T::one() / T::from_usize(n).unwrap())
    }

    /// `sum (a - b)^2`.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let diff = self.zip("squared_error", a, b, |x, y| (x - y) * (x - y))?;
        let s = diff.sum();
        let needs = self.needs(a) || self.needs(b);
        self.push("squared_error", Tensor::scalar(s), Op::SquaredError(a, b), needs)
    }

    /// `KL(N(mu, exp(logvar)) || N(0, I))` summed over all entries.
    pub fn kl_normal(&mut self, mu: Var, logvar: Var) -> Result<Var, NnError> {
        let half = T::from_f64_lossy(0.5);
        let terms = self.zip("kl_normal", mu, logvar, |m, lv| half * (m * m + lv.exp() - T::one() - lv))?;
        let s = terms.sum();
        let needs = self.needs(mu) || self.needs(logvar);
        self.push("kl_normal", Tensor::scalar(s), Op::KlNormal { mu, logvar }, needs)
    }

    /// `mu + exp(logvar / 2) * eps` with a constant noise tensor `eps`.
    pub fn gaussian_sample(&mut self, mu: Var, logvar: Var, eps: Tensor<T>) -> Result<Var, NnError> {
        let half = self.scale(logvar, T::from_f64_lossy(0.5))?;
        let std = self.exp(half)?;
        let e = self.constant(eps);
        let noise = self.mul(std, e)?;
        self.add(mu, noise)
    }

    // ---- backward ----

    /// Gradients of the scalar `loss` with respect to every parameter and
    /// input that it depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NnError> {
        let lt = self.value(loss);
        if lt.shape() != (1, 1) {
            return Err(mismatch("backward", lt.shape(), (1, 1)));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        let mut out = Gradients {
            params: vec![None; self.store.len()],
            inputs: HashMap::new(),
        };
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Param => {
                    if let Stored::Param(id) = node.value {
                        out.params[id.0] = Some(g);
                    }
                }
                Op::Input => {
                    out.inputs.insert(i, g);
                }
                Op::Constant => {}
                op => self.backward_op(op, Var(i), &g, &mut grads),
            }
        }
        if self.checked {
            for g in out.params.iter().flatten() {
                if !g.is_finite() {
                    return Err(NnError::NonFinite { op: "backward" });
                }
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    /// Accumulate through a closure writing into a zero-initialized buffer
    /// shaped like `v`.
    fn accumulate_with(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce(&mut Tensor<T>)) {
        if !self.needs(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            let (r, c) = self.value(v).shape();
            *slot = Some(Tensor::zeros(r, c));
        }
        f(slot.as_mut().unwrap());
    }

    fn backward_op(&self, op: &Op<T>, me: Var, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match op {
            Op::Constant | Op::Input | Op::Param => unreachable!(),
            Op::MatMul { a, b, ta, tb } => {
                let (a, b, ta, tb) = (*a, *b, *ta, *tb);
                let va = View::of(self.value(a)).t_if(ta);
                let vb = View::of(self.value(b)).t_if(tb);
                let vg = View::of(g);
                if self.needs(a) {
                    let da = if ta { mm(vb, vg.t()) } else { mm(vg, vb.t()) };
                    self.accumulate(grads, a, da);
                }
                if self.needs(b) {
                    let db = if tb { mm(vg.t(), va) } else { mm(va.t(), vg) };
                    self.accumulate(grads, b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = g.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::from_vec(g.rows(), g.cols(), d));
                }
                if self.needs(*b) {
                    let d = g.data().iter().zip(ta.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::from_vec(g.rows(), g.cols(), d));
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate_with(grads, *row, |acc| {
                    for r in 0..g.rows() {
                        for (x, &y) in acc.data_mut().iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                });
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| x * *s)),
            Op::ScaleRows(a, s) => {
                let mut d = g.clone();
                for (r, &k) in s.iter().enumerate() {
                    for x in d.row_mut(r) {
                        *x *= k;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                let d = g.data().iter().zip(x.data()).map(|(&gi, &xi)| gi * gelu_grad(xi)).collect();
                self.accumulate(grads, *a, Tensor::from_vec(g.rows(), g.cols(), d));
            }
            Op::Tanh(a) | Op::Sigmoid(a) | Op::Exp(a) => {
                let y = self.value(me);
                let f: fn(T) -> T = match op {
                    Op::Tanh(_) => |y| T::one() - y * y,
                    Op::Sigmoid(_) => |y| y * (T::one() - y),
                    _ => |y| y,
                };
                let d = g.data().iter().zip(y.data()).map(|(&gi, &yi)| gi * f(yi)).collect();
                self.accumulate(grads, *a, Tensor::from_vec(g.rows(), g.cols(), d));
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                    .collect();
                self.accumulate(grads, *a, Tensor::from_vec(g.rows(), g.cols(), d));
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let (rows, cols) = g.shape();
                let gam = self.value(*gamma).data();
                self.accumulate_with(grads, *gamma, |acc| {
                    for r in 0..rows {
                        for c in 0..cols {
                            acc.data_mut()[c] += g.get(r, c) * xhat[r * cols + c];
                        }
                    }
                });
                self.accumulate_with(grads, *beta, |acc| {
                    for r in 0..rows {
                        for (x, &y) in acc.data_mut().iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                });
                if self.needs(*x) {
                    let n = T::from_usize(cols).unwrap();
                    let mut dx = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        let gr = g.row(r);
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for c in 0..cols {
                            let dxh = gr[c] * gam[c];
                            m1 += dxh;
                            m2 += dxh * xh[c];
                        }
                        m1 /= n;
                        m2 /= n;
                        let o = dx.row_mut(r);
                        for c in 0..cols {
                            o[c] = rstd[r] * (gr[c] * gam[c] - m1 - xh[c] * m2);
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::SliceCols { a, start } => {
                let start = *start;
                self.accumulate_with(grads, *a, |acc| {
                    for r in 0..g.rows() {
                        for (x, &y) in acc.row_mut(r)[start..start + g.cols()].iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                });
            }
            Op::SliceRows { a, start } => {
                let off = start * g.cols();
                self.accumulate_with(grads, *a, |acc| {
                    for (x, &y) in acc.data_mut()[off..off + g.len()].iter_mut().zip(g.data()) {
                        *x += y;
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        let mut d = Tensor::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let h = self.value(p).rows();
                    if self.needs(p) {
                        self.accumulate(grads, p, g.slice_rows(off, h));
                    }
                    off += h;
                }
            }
            Op::GatherRows { table, idx } => {
                self.accumulate_with(grads, *table, |acc| {
                    for (r, &i) in idx.iter().enumerate() {
                        for (x, &y) in acc.row_mut(i).iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                });
            }
            Op::EmbeddingBag { table, idx, k } => {
                self.accumulate_with(grads, *table, |acc| {
                    for (j, &i) in idx.iter().enumerate() {
                        for (x, &y) in acc.row_mut(i).iter_mut().zip(g.row(j / k)) {
                            *x += y;
                        }
                    }
                });
            }
            Op::BlendRows { z, v, mask } => {
                if self.needs(*z) {
                    let mut dz = g.clone();
                    for (r, &m) in mask.iter().enumerate() {
                        if m {
                            dz.row_mut(r).fill(T::zero());
                        }
                    }
                    self.accumulate(grads, *z, dz);
                }
                self.accumulate_with(grads, *v, |acc| {
                    for (r, &m) in mask.iter().enumerate() {
                        if m {
                            for (x, &y) in acc.data_mut().iter_mut().zip(g.row(r)) {
                                *x += y;
                            }
                        }
                    }
                });
            }
            Op::Attention { q, k, v, heads, segs, probs } => {
                self.attention_backward(*q, *k, *v, *heads, segs, probs, g, grads);
            }
            Op::SegmentedCe { logits, segs, targets, probs } => {
                let gs = g.item();
                let (rows, cols) = self.value(*logits).shape();
                let mut d = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    for (k, &(start, len)) in segs.iter().enumerate() {
                        let tg = targets[r * segs.len() + k];
                        if tg == IGNORE {
                            continue;
                        }
                        let row = d.row_mut(r);
                        for c in start..start + len {
                            row[c] = probs[r * cols + c] * gs;
                        }
                        row[start + tg as usize] -= gs;
                    }
                }
                self.accumulate(grads, *logits, d);
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(grads, *a, Tensor::full(r, c, g.item()));
            }
            Op::SquaredError(a, b) => {
                let two = T::from_f64_lossy(2.0) * g.item();
                let (ta, tb) = (self.value(*a), self.value(*b));
                let d: Vec<T> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| two * (x - y)).collect();
                let d = Tensor::from_vec(ta.rows(), ta.cols(), d);
                if self.needs(*b) {
                    self.accumulate(grads, *b, d.map(|x| -x));
                }
                self.accumulate(grads, *a, d);
            }
            Op::KlNormal { mu, logvar } => {
                let gs = g.item();
                let half = T::from_f64_lossy(0.5);
                self.accumulate(grads, *mu, self.value(*mu).map(|m| m * gs));
                self.accumulate(grads, *logvar, self.value(*logvar).map(|lv| half * gs * (lv.exp() - T::one())));
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segs: &[AttnSegment],
        probs: &[T],
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let d = tq.cols();
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let mut dq = Tensor::zeros(tq.rows(), d);
        let mut dk = Tensor::zeros(tk.rows(), d);
        let mut dv = Tensor::zeros(tv.rows(), d);
        let mut off = 0;
        fn view<T>(t: &[T], start: usize, rows: usize, dh: usize, d: usize) -> View<'_, T> {
            View {
                data: &t[start..],
                rows,
                cols: dh,
                rs: d as isize,
                cs: 1,
            }
        }
        for s in segs {
            for h in 0..heads {
                let (qn, kn) = (s.q_len, s.k_len);
                let p = &probs[off..off + qn * kn];
                off += qn * kn;
                let qo = s.q_start * d + h * dh;
                let ko = s.k_start * d + h * dh;
                let pv = View {
                    data: p,
                    rows: qn,
                    cols: kn,
                    rs: kn as isize,
                    cs: 1,
                };
                let gv = view(g.data(), qo, qn, dh, d);
                // dV += P^T dO
                gemm_into(pv.t(), gv, T::one(), T::one(), &mut dv.data_mut()[ko..], d as isize, 1);
                // dP = dO V^T
                let mut ds = vec![T::zero(); qn * kn];
                gemm_into(gv, view(tv.data(), ko, kn, dh, d).t(), T::one(), T::zero(), &mut ds, kn as isize, 1);
                for i in 0..qn {
                    let pr = &p[i * kn..(i + 1) * kn];
                    let dr = &mut ds[i * kn..(i + 1) * kn];
                    let dot = pr.iter().zip(dr.iter()).fold(T::zero(), |a, (&x, &y)| a + x * y);
                    for (x, &pp) in dr.iter_mut().zip(pr) {
                        *x = pp * (*x - dot);
                    }
                }
                let dsv = View {
                    data: &ds,
                    rows: qn,
                    cols: kn,
                    rs: kn as isize,
                    cs: 1,
                };
                gemm_into(dsv, view(tk.data(), ko, kn, dh, d), scale, T::one(), &mut dq.data_mut()[qo..], d as isize, 1);
                gemm_into(dsv.t(), view(tq.data(), qo, qn, dh, d), scale, T::one(), &mut dk.data_mut()[ko..], d as isize, 1);
            }
        }
        self.accumulate(grads, q, dq);
        self.accumulate(grads, k, dk);
        self.accumulate(grads, v, dv);
    }
}
