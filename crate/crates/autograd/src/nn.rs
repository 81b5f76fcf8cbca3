//! Layers built from graph primitives. Each layer only stores parameter ids;
//! values live in a [`ParamStore`].

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.glorot(format!("{name}.weight"), group, in_dim, out_dim, rng);
        let bias = store.zeros(format!("{name}.bias"), group, 1, out_dim);
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let h = g.matmul(x, w);
        g.add_row(h, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: &str, dim: usize) -> Self {
        let gamma = store.add(
            format!("{name}.gamma"),
            group,
            ndarray::Array2::ones((1, dim)),
        );
        let beta = store.zeros(format!("{name}.beta"), group, 1, dim);
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let n = g.layer_norm_rows(x, LN_EPS);
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let s = g.mul_row(n, gamma);
        g.add_row(s, beta)
    }
}

/// Two linear layers with a ReLU in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: &str,
        dims: (usize, usize, usize),
        rng: &mut R,
    ) -> Self {
        let (i, h, o) = dims;
        Self {
            hidden: Linear::new(store, &format!("{name}.fc1"), group, i, h, rng),
            out: Linear::new(store, &format!("{name}.fc2"), group, h, o, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let h = self.hidden.forward(g, store, x);
        let h = g.relu(h);
        self.out.forward(g, store, h)
    }
}

/// Multi-head scaled dot-product attention with input and output projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

/// Result of an attention call: the projected output and the per-head
/// attention probabilities (queries × keys, rows sum to one).
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        Self {
            query: Linear::new(store, &format!("{name}.q"), group, dim, dim, rng),
            key: Linear::new(store, &format!("{name}.k"), group, dim, dim, rng),
            value: Linear::new(store, &format!("{name}.v"), group, dim, dim, rng),
            output: Linear::new(store, &format!("{name}.o"), group, dim, dim, rng),
            heads,
            dim,
        }
    }

    /// `queries` is Lq×dim, `context` is Lk×dim (Lk ≥ 1).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, queries: Var, context: Var) -> AttentionOutput {
        let q = self.query.forward(g, store, queries);
        let k = self.key.forward(g, store, context);
        let v = self.value.forward(g, store, context);
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (g.slice_cols(q, lo, hi), g.slice_cols(k, lo, hi), g.slice_cols(v, lo, hi))
            };
            let scores = g.matmul_t(qh, kh);
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores);
            outs.push(g.matmul(attn, vh));
            weights.push(attn);
        }
        let joined = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        let output = self.output.forward(g, store, joined);
        AttentionOutput { output, weights }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "a", "g", 8, 2, &mut rng);
        let mut g = Graph::new();
        let q = g.constant(Array2::from_shape_fn((3, 8), |(i, j)| (i * 8 + j) as f64 * 0.1));
        let c = g.constant(Array2::from_shape_fn((5, 8), |(i, j)| ((i + j) % 3) as f64));
        let out = mha.forward(&mut g, &store, q, c);
        assert_eq!(g.shape(out.output), (3, 8));
        assert_eq!(out.weights.len(), 2);
        for w in out.weights {
            assert_eq!(g.shape(w), (3, 5));
            for row in g.value(w).rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }
}
