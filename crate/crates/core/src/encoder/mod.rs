//! The EEG encoder.
//!
//! Pipeline, per batch `x: [B, C, T]`:
//!
//! 1. DWT block (optional): Haar analysis, a learned per-channel affine
//!    transform of the approximation and detail bands, Haar synthesis, and
//!    fusion of the reconstruction with the input.
//! 2. Local (convolutional) and global (transformer) branches in parallel,
//!    merged by a sigmoid gate computed from the favored branch.
//! 3. Temporal and spatial convolutional branches over the merged features,
//!    fused by channel attention.
//! 4. Flatten, linear projection to the embedding width, L2 normalization.

mod attention;
mod branches;
mod config;

pub use attention::{GlobalBranch, GlobalOutput, TransformerLayer};
pub use branches::{
    gated_combine, gated_combine_graph, AttentionFuse, FuseOutput, Gate, GateWeights, LocalBranch, SpatialBranch,
    TemporalBranch,
};
pub use config::{EncoderConfig, GatePlacement};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::datasets::EEGTensor;
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::layers::{add_channel_bias, Ctx, Linear};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::wavelet::{dwt_forward_graph, dwt_inverse_graph, fuse_graph, identity, FuseParams};

/// Learned band transform plus reconstruction fusion.
#[derive(Debug, Clone)]
pub struct DwtBlock {
    pub approx_scale: ParamId,
    pub approx_shift: ParamId,
    pub detail_scale: ParamId,
    pub detail_shift: ParamId,
    pub fuse_weight: ParamId,
    pub fuse_bias: ParamId,
    pub conv_weight: ParamId,
    pub conv_bias: ParamId,
}

impl DwtBlock {
    /// Initialized so the whole block is the identity map.
    pub fn new(store: &mut ParamStore, channels: usize) -> Self {
        let fuse = FuseParams::averaging(channels);
        Self {
            approx_scale: store.add("dwt.approx_scale", Tensor::full(&[channels], 1.0), true),
            approx_shift: store.add("dwt.approx_shift", Tensor::zeros(&[channels]), true),
            detail_scale: store.add("dwt.detail_scale", Tensor::full(&[channels], 1.0), true),
            detail_shift: store.add("dwt.detail_shift", Tensor::zeros(&[channels]), true),
            fuse_weight: store.add("dwt.fuse.weight", fuse.weight, true),
            fuse_bias: store.add("dwt.fuse.bias", fuse.bias, true),
            conv_weight: store.add("dwt.fuse.conv_weight", identity(channels), true),
            conv_bias: store.add("dwt.fuse.conv_bias", fuse.conv_bias, true),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (a, d) = dwt_forward_graph(g, x)?;
        let a = self.band(g, store, a, self.approx_scale, self.approx_shift)?;
        let d = self.band(g, store, d, self.detail_scale, self.detail_shift)?;
        let rec = dwt_inverse_graph(g, a, d)?;
        let w = g.param(store, self.fuse_weight);
        let b = g.param(store, self.fuse_bias);
        let cw = g.param(store, self.conv_weight);
        let cb = g.param(store, self.conv_bias);
        fuse_graph(g, x, rec, w, b, cw, cb)
    }

    fn band(&self, g: &mut Graph, store: &ParamStore, coeffs: Var, scale: ParamId, shift: ParamId) -> Result<Var> {
        let c = g.shape(coeffs)[1];
        let s = g.param(store, scale);
        let s = g.reshape(s, &[1, c, 1])?;
        let scaled = g.mul_bcast(coeffs, s)?;
        let b = g.param(store, shift);
        add_channel_bias(g, scaled, b)
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    pub dwt: Option<DwtBlock>,
    pub local: Option<LocalBranch>,
    pub global: Option<GlobalBranch>,
    pub gate: Option<Gate>,
    pub temporal: TemporalBranch,
    pub spatial: SpatialBranch,
    pub fuse: AttentionFuse,
    pub head: Linear,
}

/// Intermediate nodes of one forward pass, for inspection and tests.
pub struct EncoderTrace {
    pub input: Var,
    pub after_dwt: Var,
    pub local: Option<Var>,
    pub global: Option<GlobalOutput>,
    pub gate: Option<Var>,
    pub combined: Var,
    pub temporal: Var,
    pub spatial: Var,
    pub fused: FuseOutput,
    pub embedding: Var,
}

impl Encoder {
    /// Build the layer layout for `cfg` and a freshly initialized parameter store.
    pub fn init(cfg: EncoderConfig, seed: u64) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = cfg.channels;
        let f = cfg.feature_width;
        let dwt = cfg.use_dwt.then(|| DwtBlock::new(&mut store, c));
        let local = cfg
            .use_local_branch
            .then(|| LocalBranch::new(&mut store, c, cfg.time, f, cfg.temporal_kernel, cfg.spatial_kernel, &mut rng));
        let global = cfg.use_global_branch.then(|| {
            GlobalBranch::new(&mut store, cfg.time, f, cfg.attention_heads, cfg.transformer_layers, cfg.ffn_multiplier, &mut rng)
        });
        let gate = (cfg.use_local_branch && cfg.use_global_branch).then(|| Gate::new(&mut store, c, &mut rng));
        let temporal = TemporalBranch::new(&mut store, c, cfg.temporal_kernel, cfg.pool, cfg.dropout, &mut rng);
        let spatial = SpatialBranch::new(&mut store, c, cfg.spatial_kernel, cfg.separable_kernel, cfg.pool, cfg.dropout, &mut rng);
        let fuse = AttentionFuse::new(&mut store, c, cfg.attention_reduction, cfg.fused_width, &mut rng);
        let head = Linear::new(&mut store, "head", c * cfg.fused_width, cfg.embedding_dim, &mut rng);
        Ok((
            Self {
                cfg,
                dwt,
                local,
                global,
                gate,
                temporal,
                spatial,
                fuse,
                head,
            },
            store,
        ))
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[1] != self.cfg.channels || shape[2] != self.cfg.time || shape[0] == 0 {
            return Err(Error::Argument(format!(
                "encoder expects B x {} x {}, got {:?}",
                self.cfg.channels, self.cfg.time, shape
            )));
        }
        Ok(())
    }

    /// Full forward pass, keeping every intermediate node.
    pub fn forward_traced(&self, g: &mut Graph, store: &ParamStore, ctx: &mut Ctx, x: Var) -> Result<EncoderTrace> {
        self.check_input(g.shape(x))?;
        let after_dwt = match &self.dwt {
            Some(block) => block.forward(g, store, x)?,
            None => x,
        };
        let local = match &self.local {
            Some(l) => Some(l.forward(g, store, ctx, after_dwt)?),
            None => None,
        };
        let global = match &self.global {
            Some(gb) => Some(gb.forward(g, store, after_dwt)?),
            None => None,
        };
        let (combined, gate) = match (local, global.as_ref().map(|o| o.features)) {
            (Some(lo), Some(gl)) => {
                let (favored, other) = match self.cfg.gate_placement {
                    GatePlacement::GlobalBranch => (gl, lo),
                    GatePlacement::LocalBranch => (lo, gl),
                };
                let gate = self.gate.as_ref().expect("gate exists with both branches");
                let w = gate.forward(g, store, favored)?;
                (gated_combine_graph(g, favored, other, w)?, Some(w))
            }
            (Some(lo), None) => (lo, None),
            (None, Some(gl)) => (gl, None),
            (None, None) => unreachable!("config validation requires a branch"),
        };
        let temporal = self.temporal.forward(g, store, ctx, combined)?;
        let spatial = self.spatial.forward(g, store, ctx, combined)?;
        let fused = self.fuse.forward(g, store, ctx, temporal, spatial)?;
        let b = g.shape(x)[0];
        let flat = g.reshape(fused.features, &[b, self.cfg.channels * self.cfg.fused_width])?;
        let projected = self.head.forward(g, store, flat)?;
        let embedding = g.l2_normalize(projected)?;
        Ok(EncoderTrace {
            input: x,
            after_dwt,
            local,
            global,
            gate,
            combined,
            temporal,
            spatial,
            fused,
            embedding,
        })
    }

    /// Unit-norm embeddings `[B, D]` as a graph node.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, ctx: &mut Ctx, x: Var) -> Result<Var> {
        Ok(self.forward_traced(g, store, ctx, x)?.embedding)
    }

    /// Inference-mode embeddings for a raw `[B, C, T]` tensor.
    pub fn embed(&self, store: &ParamStore, x: &Tensor) -> Result<Embedding> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let mut ctx = Ctx::inference();
        let y = self.forward(&mut g, store, &mut ctx, xv)?;
        Embedding::new(g.value(y).clone())
    }

    pub fn encode(&self, store: &ParamStore, x: &EEGTensor) -> Result<Embedding> {
        self.embed(store, x.data())
    }

    /// Embed in chunks of `batch` rows.
    pub fn encode_batched(&self, store: &ParamStore, x: &EEGTensor, batch: usize) -> Result<Embedding> {
        let n = x.batch();
        let mut rows: Vec<f64> = Vec::with_capacity(n * self.cfg.embedding_dim);
        for start in (0..n).step_by(batch.max(1)) {
            let idx: Vec<usize> = (start..(start + batch.max(1)).min(n)).collect();
            let e = self.encode(store, &x.select_rows(&idx))?;
            rows.extend_from_slice(e.tensor().data());
        }
        Embedding::new(Tensor::new(vec![n, self.cfg.embedding_dim], rows)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::uniform;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            dropout: 0.0,
            ..EncoderConfig::tiny(4, 8, 16)
        }
    }

    fn input(shape: &[usize], seed: u64) -> Tensor {
        uniform(&mut ChaCha8Rng::seed_from_u64(seed), shape, 1.0)
    }

    #[test]
    fn embeddings_have_unit_norm_and_shape() {
        let (enc, store) = Encoder::init(tiny(), 0).unwrap();
        for b in [1, 3] {
            let e = enc.embed(&store, &input(&[b, 4, 8], b as u64)).unwrap();
            assert_eq!(e.tensor().shape(), &[b, 16]);
            assert!(e.max_norm_deviation() < 1e-5);
        }
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let (enc, store) = Encoder::init(tiny(), 0).unwrap();
        assert!(matches!(enc.embed(&store, &input(&[2, 5, 8], 0)), Err(Error::Argument(_))));
    }

    #[test]
    fn dwt_block_starts_as_identity() {
        let (enc, store) = Encoder::init(tiny(), 0).unwrap();
        let mut g = Graph::new();
        let x = g.constant(input(&[2, 4, 8], 5));
        let y = enc.dwt.as_ref().unwrap().forward(&mut g, &store, x).unwrap();
        assert!(g.value(y).max_abs_diff(g.value(x)) < 1e-12);
    }

    #[test]
    fn default_config_shape_table() {
        let (enc, store) = Encoder::init(EncoderConfig { dropout: 0.0, ..EncoderConfig::default() }, 1).unwrap();
        let mut g = Graph::new();
        let x = g.constant(input(&[2, 64, 100], 2));
        let mut ctx = Ctx::inference();
        let tr = enc.forward_traced(&mut g, &store, &mut ctx, x).unwrap();
        assert_eq!(g.shape(tr.after_dwt), &[2, 64, 100]);
        assert_eq!(g.shape(tr.local.unwrap()), &[2, 64, 128]);
        assert_eq!(g.shape(tr.global.as_ref().unwrap().features), &[2, 64, 128]);
        assert_eq!(g.shape(tr.gate.unwrap()), &[2, 64, 1]);
        assert_eq!(g.shape(tr.temporal), &[2, 64, 25]);
        assert_eq!(g.shape(tr.spatial), &[2, 64, 25]);
        assert_eq!(g.shape(tr.fused.features), &[2, 64, 8]);
        assert_eq!(g.shape(tr.embedding), &[2, 1024]);
    }
}
