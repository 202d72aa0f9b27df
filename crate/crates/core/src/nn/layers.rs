use super::params::{xavier, ParamStore, Weights};
use crate::autograd::{AttnSegment, Graph, NodeId, ParamId};
use ndarray::Array2;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, d_in: usize, d_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), xavier(rng, d_in, d_out), true);
        let b = store.add(format!("{name}.b"), Array2::zeros((1, d_out)), false);
        Self { w, b }
    }

    /// Identity map (requires `d_in == d_out`).
    pub fn identity(store: &mut ParamStore, name: &str, d: usize) -> Self {
        let w = store.add(format!("{name}.w"), Array2::eye(d), true);
        let b = store.add(format!("{name}.b"), Array2::zeros((1, d)), false);
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, w: &Weights, x: NodeId) -> NodeId {
        let wn = w.node(g, self.w);
        let bn = w.node(g, self.b);
        let y = g.matmul(x, wn);
        g.add_row(y, bn)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Array2::ones((1, d)), false);
        let beta = store.add(format!("{name}.beta"), Array2::zeros((1, d)), false);
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, w: &Weights, x: NodeId) -> NodeId {
        let gm = w.node(g, self.gamma);
        let bt = w.node(g, self.beta);
        g.layer_norm(x, gm, bt)
    }
}

/// Pre-norm transformer block.
#[derive(Debug, Clone)]
pub struct Block {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    heads: usize,
}

impl Block {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, d: usize, heads: usize) -> Self {
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            q: Linear::new(store, rng, &format!("{name}.q"), d, d),
            k: Linear::new(store, rng, &format!("{name}.k"), d, d),
            v: Linear::new(store, rng, &format!("{name}.v"), d, d),
            proj: Linear::new(store, rng, &format!("{name}.proj"), d, d),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), d, 4 * d),
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), 4 * d, d),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, w: &Weights, x: NodeId, segments: &[AttnSegment]) -> NodeId {
        let h = self.ln1.forward(g, w, x);
        let q = self.q.forward(g, w, h);
        let k = self.k.forward(g, w, h);
        let v = self.v.forward(g, w, h);
        let a = g.attention(q, k, v, self.heads, segments.to_vec());
        let a = self.proj.forward(g, w, a);
        let x = g.add(x, a);
        let h = self.ln2.forward(g, w, x);
        let h = self.fc1.forward(g, w, h);
        let h = g.gelu(h);
        let h = self.fc2.forward(g, w, h);
        g.add(x, h)
    }
}

/// Segments for a batch of consecutive sequences with the given lengths.
pub fn segments_for(lengths: &[usize]) -> Vec<AttnSegment> {
    let mut start = 0;
    lengths
        .iter()
        .map(|&n| {
            let s = AttnSegment::square(start, n);
            start += n;
            s
        })
        .collect()
}

/// 2-D sine-cosine embeddings for continuous `(row, col)` coordinates in
/// patch units. Half the channels encode the row, half the column.
pub fn posemb_2d(coords: &[(f64, f64)], dim: usize) -> Array2<f64> {
    assert!(dim.is_multiple_of(4), "2-D positional embedding needs dim divisible by 4");
    let quarter = dim / 4;
    let mut out = Array2::zeros((coords.len(), dim));
    for (i, &(r, c)) in coords.iter().enumerate() {
        for k in 0..quarter {
            let omega = 1.0 / 10000f64.powf(k as f64 / quarter as f64);
            out[[i, k]] = (r * omega).sin();
            out[[i, quarter + k]] = (r * omega).cos();
            out[[i, 2 * quarter + k]] = (c * omega).sin();
            out[[i, 3 * quarter + k]] = (c * omega).cos();
        }
    }
    out
}

/// Integer grid coordinates of the cells `positions` of a `gw`-wide grid.
pub fn grid_coords(positions: &[usize], gw: usize) -> Vec<(f64, f64)> {
    positions
        .iter()
        .map(|&p| ((p / gw) as f64, (p % gw) as f64))
        .collect()
}

/// 1-D sine-cosine embeddings for sequence positions.
pub fn posemb_1d(len: usize, dim: usize) -> Array2<f64> {
    assert!(dim.is_multiple_of(2));
    let half = dim / 2;
    Array2::from_shape_fn((len, dim), |(t, j)| {
        let k = j % half;
        let omega = 1.0 / 10000f64.powf(k as f64 / half as f64);
        if j < half {
            (t as f64 * omega).sin()
        } else {
            (t as f64 * omega).cos()
        }
    })
}
