//! Transformer encoder with channels as tokens.
//!
//! Every electrode is one token whose features are its projected time
//! course, so attention mixes information across channels while each output
//! row stays tied to its channel. There is no positional encoding: token
//! identity comes from the channel's own signal.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::{LayerNorm, Linear};
use crate::params::ParamStore;

#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub norm1: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub norm2: LayerNorm,
    pub heads: usize,
}

impl TransformerLayer {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, ffn_mult: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            query: Linear::new(store, &format!("{name}.query"), width, width, rng),
            key: Linear::new(store, &format!("{name}.key"), width, width, rng),
            value: Linear::new(store, &format!("{name}.value"), width, width, rng),
            output: Linear::new(store, &format!("{name}.output"), width, width, rng),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), width),
            ffn_in: Linear::new(store, &format!("{name}.ffn_in"), width, width * ffn_mult, rng),
            ffn_out: Linear::new(store, &format!("{name}.ffn_out"), width * ffn_mult, width, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), width),
            heads,
        }
    }

    /// `x: [B, N, F]` → (`[B, N, F]`, attention weights `[B * heads, N, N]`).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<(Var, Var)> {
        let s = g.shape(x).to_vec();
        let (b, n, f) = (s[0], s[1], s[2]);
        let h = self.heads;
        if f % h != 0 {
            return Err(Error::Argument(format!("width {f} not divisible by {h} heads")));
        }
        let dh = f / h;
        let q = self.query.forward(g, store, x)?;
        let k = self.key.forward(g, store, x)?;
        let v = self.value.forward(g, store, x)?;
        let q = split_heads(g, q, b, n, h, dh)?;
        let k = split_heads(g, k, b, n, h, dh)?;
        let v = split_heads(g, v, b, n, h, dh)?;
        let kt = g.permute(k, &[0, 2, 1]);
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let attn = g.softmax(scores);
        let ctx = g.matmul(attn, v)?;
        let ctx = g.reshape(ctx, &[b, h, n, dh])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3]);
        let ctx = g.reshape(ctx, &[b, n, f])?;
        let o = self.output.forward(g, store, ctx)?;
        let r = g.add(x, o)?;
        let y = self.norm1.forward(g, store, r)?;
        let hidden = self.ffn_in.forward(g, store, y)?;
        let hidden = g.gelu(hidden);
        let ff = self.ffn_out.forward(g, store, hidden)?;
        let r2 = g.add(y, ff)?;
        Ok((self.norm2.forward(g, store, r2)?, attn))
    }
}

fn split_heads(g: &mut Graph, x: Var, b: usize, n: usize, h: usize, dh: usize) -> Result<Var> {
    let r = g.reshape(x, &[b, n, h, dh])?;
    let p = g.permute(r, &[0, 2, 1, 3]);
    g.reshape(p, &[b * h, n, dh])
}

/// Time projection followed by a stack of transformer layers.
#[derive(Debug, Clone)]
pub struct GlobalBranch {
    pub projection: Linear,
    pub layers: Vec<TransformerLayer>,
}

/// Output of the global branch plus per-layer attention weights.
pub struct GlobalOutput {
    pub features: Var,
    pub attention: Vec<Var>,
}

impl GlobalBranch {
    pub fn new(store: &mut ParamStore, time: usize, width: usize, heads: usize, layers: usize, ffn_mult: usize, rng: &mut ChaCha8Rng) -> Self {
        let projection = Linear::new(store, "global.projection", time, width, rng);
        let layers = (0..layers)
            .map(|i| TransformerLayer::new(store, &format!("global.layer{i}"), width, heads, ffn_mult, rng))
            .collect();
        Self { projection, layers }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<GlobalOutput> {
        let mut h = self.projection.forward(g, store, x)?;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, attn) = layer.forward(g, store, h)?;
            h = out;
            attention.push(attn);
        }
        Ok(GlobalOutput { features: h, attention })
    }
}
