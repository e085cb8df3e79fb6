//! Parameterized building blocks. Each layer only holds [`ParamId`]s, so
//! the same layer value drives a graph in any precision.

use rand::Rng;

use crate::{AttnSegment, Graph, NnError, ParamId, ParamStore, Real, Tensor, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weights `N(0, 1/fan_in)`, zero bias.
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let std = 1.0 / (fan_in as f64).sqrt();
        Linear {
            w: store.randn(format!("{name}.w"), fan_in, fan_out, std, rng),
            b: store.zeros(format!("{name}.b"), 1, fan_out),
            fan_in,
            fan_out,
        }
    }

    /// All-zero weights and bias.
    pub fn zeros<T: Real>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: store.zeros(format!("{name}.w"), fan_in, fan_out),
            b: store.zeros(format!("{name}.b"), 1, fan_out),
            fan_in,
            fan_out,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var, NnError> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.ones(format!("{name}.gamma"), 1, dim),
            beta: store.zeros(format!("{name}.beta"), 1, dim),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var, NnError> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedding {
    pub table: ParamId,
    pub count: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, count: usize, dim: usize, std: f64) -> Self {
        Embedding {
            table: store.randn(format!("{name}.table"), count, dim, std, rng),
            count,
            dim,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, idx: Vec<usize>) -> Result<Var, NnError> {
        let t = g.param(self.table);
        g.gather_rows(t, idx)
    }
}

/// Stack of linear layers with GELU between them (none after the last).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]` gives `dims.len() - 1` layers.
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, dims: &[usize]) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Mlp { layers }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, mut x: Var) -> Result<Var, NnError> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, x)?;
            if i + 1 < self.layers.len() {
                x = g.gelu(x)?;
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        MultiHeadAttention {
            q: Linear::new(store, rng, &format!("{name}.q"), dim, dim),
            k: Linear::new(store, rng, &format!("{name}.k"), dim, dim),
            v: Linear::new(store, rng, &format!("{name}.v"), dim, dim),
            o: Linear::new(store, rng, &format!("{name}.o"), dim, dim),
            heads,
        }
    }

    /// Queries from `x`, keys and values from `memory`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        memory: Var,
        segs: &[AttnSegment],
        causal: bool,
    ) -> Result<Var, NnError> {
        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, memory)?;
        let v = self.v.forward(g, memory)?;
        let a = g.attention(q, k, v, self.heads, segs, causal)?;
        self.o.forward(g, a)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, dim: usize, hidden: usize) -> Self {
        FeedForward {
            up: Linear::new(store, rng, &format!("{name}.up"), dim, hidden),
            down: Linear::new(store, rng, &format!("{name}.down"), hidden, dim),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var, NnError> {
        let h = self.up.forward(g, x)?;
        let h = g.gelu(h)?;
        self.down.forward(g, h)
    }
}

/// Pre-norm transformer block: self-attention, optional cross-attention,
/// feed-forward, each wrapped in a residual connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub cross: Option<(LayerNorm, MultiHeadAttention)>,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

impl TransformerBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        dim: usize,
        heads: usize,
        cross: bool,
    ) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), dim, heads),
            cross: cross.then(|| {
                (
                    LayerNorm::new(store, &format!("{name}.ln_cross"), dim),
                    MultiHeadAttention::new(store, rng, &format!("{name}.cross"), dim, heads),
                )
            }),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), dim, 4 * dim),
        }
    }

    /// `segs` delimit sequences in `x`; `cross_segs` pair them with rows of
    /// `memory`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        segs: &[AttnSegment],
        causal: bool,
        memory: Option<(Var, &[AttnSegment])>,
    ) -> Result<Var, NnError> {
        let h = self.ln1.forward(g, x)?;
        let a = self.attn.forward(g, h, h, segs, causal)?;
        let mut x = g.add(x, a)?;
        if let (Some((ln, attn)), Some((mem, cross_segs))) = (&self.cross, memory) {
            let h = ln.forward(g, x)?;
            let a = attn.forward(g, h, mem, cross_segs, false)?;
            x = g.add(x, a)?;
        }
        let h = self.ln2.forward(g, x)?;
        let f = self.ffn.forward(g, h)?;
        g.add(x, f)
    }
}

/// Fixed sinusoidal table, row `p` encoding position (or timestep) `p`.
pub fn sinusoidal_table<T: Real>(count: usize, dim: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(count, dim);
    for p in 0..count {
        for i in 0..dim / 2 {
            let freq = (-(2.0 * i as f64 / dim as f64) * (10_000f64).ln()).exp();
            let angle = p as f64 * freq;
            t.set(p, 2 * i, T::from_f64_lossy(angle.sin()));
            t.set(p, 2 * i + 1, T::from_f64_lossy(angle.cos()));
        }
    }
    t
}
