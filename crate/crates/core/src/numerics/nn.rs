//! Layers assembled from graph primitives.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{Linear, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Feed-forward network with ReLU between affine layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `sizes = [in, hidden..., out]`.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        sizes: &[usize],
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| params.insert_linear(&format!("{prefix}.{i}"), w[0], w[1], true, rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, graph: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(graph, vars, h)?;
            if i + 1 < self.layers.len() {
                h = graph.relu(h)?;
            }
        }
        Ok(h)
    }

    pub fn apply(&self, params: &ParamSet, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(params, &h);
            if i + 1 < self.layers.len() {
                h = h.map(|v| v.max(0.0));
            }
        }
        h
    }

    pub fn input_dim(&self, params: &ParamSet) -> usize {
        params.get(self.layers[0].weight).rows()
    }
}

/// Multi-head scaled dot-product self-attention without positional terms.
///
/// The key projection carries no bias: a key bias shifts every logit in a
/// softmax row by the same amount and has identically zero gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub d_model: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {d_model} must be divisible by heads {heads}"
            )));
        }
        Ok(Self {
            heads,
            d_model,
            query: params.insert_linear(&format!("{prefix}.q"), d_model, d_model, true, rng),
            key: params.insert_linear(&format!("{prefix}.k"), d_model, d_model, false, rng),
            value: params.insert_linear(&format!("{prefix}.v"), d_model, d_model, true, rng),
            output: params.insert_linear(&format!("{prefix}.o"), d_model, d_model, true, rng),
        })
    }

    /// `x`: `tokens × d_model` → `tokens × d_model`.
    pub fn forward(&self, graph: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let q = self.query.forward(graph, vars, x)?;
        let k = self.key.forward(graph, vars, x)?;
        let v = self.value.forward(graph, vars, x)?;
        let dh = self.d_model / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = graph.slice_cols(q, h * dh, dh)?;
            let kh = graph.slice_cols(k, h * dh, dh)?;
            let vh = graph.slice_cols(v, h * dh, dh)?;
            let logits = graph.matmul_nt(qh, kh)?;
            let logits = graph.scale(logits, scale)?;
            let weights = graph.softmax_rows(logits)?;
            outs.push(graph.matmul(weights, vh)?);
        }
        let joined = if outs.len() == 1 {
            outs[0]
        } else {
            graph.concat_cols(&outs)?
        };
        self.output.forward(graph, vars, joined)
    }
}

/// Layer normalization with learned gain and bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: usize,
    pub bias: usize,
}

impl LayerNorm {
    pub fn new(params: &mut ParamSet, prefix: &str, width: usize) -> Self {
        Self {
            gain: params.insert(format!("{prefix}.gain"), Tensor::filled(1, width, 1.0)),
            bias: params.insert(format!("{prefix}.bias"), Tensor::zeros(1, width)),
        }
    }

    pub fn forward(&self, graph: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let n = graph.layer_norm_rows(x)?;
        let s = graph.mul_row(n, vars[self.gain])?;
        graph.add_row(s, vars[self.bias])
    }
}

/// Transformer encoder block: attention and feed-forward sublayers, each
/// with a residual connection followed by layer normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderBlock {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub norm2: LayerNorm,
}

impl EncoderBlock {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        d_model: usize,
        heads: usize,
        d_ff: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let attention = MultiHeadAttention::new(params, &format!("{prefix}.attn"), d_model, heads, rng)?;
        let norm1 = LayerNorm::new(params, &format!("{prefix}.ln1"), d_model);
        let ff_in = params.insert_linear(&format!("{prefix}.ff1"), d_model, d_ff, true, rng);
        let ff_out = params.insert_linear(&format!("{prefix}.ff2"), d_ff, d_model, true, rng);
        let norm2 = LayerNorm::new(params, &format!("{prefix}.ln2"), d_model);
        Ok(Self {
            attention,
            norm1,
            ff_in,
            ff_out,
            norm2,
        })
    }

    pub fn forward(&self, graph: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let a = self.attention.forward(graph, vars, x)?;
        let r = graph.add(x, a)?;
        let h = self.norm1.forward(graph, vars, r)?;
        let f = self.ff_in.forward(graph, vars, h)?;
        let f = graph.relu(f)?;
        let f = self.ff_out.forward(graph, vars, f)?;
        let r = graph.add(h, f)?;
        self.norm2.forward(graph, vars, r)
    }
}
