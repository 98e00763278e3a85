//! Convolutional branches, the gate, and channel-attention fusion.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::{avg_pool, dropout, BatchNorm, Ctx, DepthwiseConv, Linear, NeighborConv, PointwiseConv};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Depthwise temporal conv → neighbour-channel conv → BN → ELU → time projection.
#[derive(Debug, Clone)]
pub struct LocalBranch {
    pub temporal: DepthwiseConv,
    pub spatial: NeighborConv,
    pub norm: BatchNorm,
    pub projection: Linear,
}

impl LocalBranch {
    pub fn new(store: &mut ParamStore, channels: usize, time: usize, width: usize, temporal_kernel: usize, spatial_kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            temporal: DepthwiseConv::new(store, "local.temporal", channels, temporal_kernel, rng),
            spatial: NeighborConv::new(store, "local.spatial", channels, spatial_kernel, rng),
            norm: BatchNorm::new(store, "local.norm", channels),
            projection: Linear::new(store, "local.projection", time, width, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let pre = self.pre_activation(g, store, ctx, x)?;
        let a = g.elu(pre);
        self.projection.forward(g, store, a)
    }

    /// Output of batch normalization, before the nonlinearity.
    pub fn pre_activation(&self, g: &mut Graph, store: &ParamStore, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let t = self.temporal.forward(g, store, x)?;
        let s = self.spatial.forward(g, store, t)?;
        self.norm.forward(g, store, ctx, s)
    }
}

/// Gate coefficients `B x C x 1`, each strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct GateWeights(Tensor);

impl GateWeights {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.rank() != 3 || t.shape()[2] != 1 {
            return Err(Error::Argument(format!("gate weights must be B x C x 1, got {:?}", t.shape())));
        }
        if !t.data().iter().all(|&v| v > 0.0 && v < 1.0) {
            return Err(Error::Argument("gate weights must lie strictly inside (0, 1)".into()));
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

/// Mean over the feature axis, 1x1 projection across channels, sigmoid.
#[derive(Debug, Clone)]
pub struct Gate {
    pub projection: PointwiseConv,
}

impl Gate {
    pub fn new(store: &mut ParamStore, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            projection: PointwiseConv::new(store, "gate.projection", channels, channels, rng),
        }
    }

    /// `x: [B, C, L]` → gates `[B, C, 1]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let pooled = g.mean_axis(x, 2);
        let z = self.projection.forward(g, store, pooled)?;
        Ok(g.sigmoid(z))
    }
}

/// `gate ⊙ favored + (1 - gate) ⊙ other`, gate broadcast over the feature axis.
pub fn gated_combine_graph(g: &mut Graph, favored: Var, other: Var, gate: Var) -> Result<Var> {
    if g.shape(favored) != g.shape(other) {
        return Err(Error::Argument(format!(
            "gated combine: {:?} vs {:?}",
            g.shape(favored),
            g.shape(other)
        )));
    }
    // other + gate ⊙ (favored - other)
    let diff = g.sub(favored, other)?;
    let weighted = g.mul_bcast(diff, gate)?;
    g.add(other, weighted)
}

/// `g ⊙ global + (1 - g) ⊙ local` on plain tensors.
pub fn gated_combine(local: &Tensor, global: &Tensor, gate: &GateWeights) -> Result<Tensor> {
    let s = local.shape();
    if s != global.shape() || s.len() != 3 || gate.0.shape()[..2] != s[..2] {
        return Err(Error::Argument(format!(
            "gated combine: local {:?}, global {:?}, gate {:?}",
            s,
            global.shape(),
            gate.0.shape()
        )));
    }
    let l = s[2];
    let data = local
        .data()
        .iter()
        .zip(global.data())
        .enumerate()
        .map(|(i, (&lo, &gl))| {
            let w = gate.0.data()[i / l];
            w * gl + (1.0 - w) * lo
        })
        .collect();
    Tensor::new(s.to_vec(), data)
}

/// Depthwise temporal conv → ELU → average pool → dropout → point-wise conv.
#[derive(Debug, Clone)]
pub struct TemporalBranch {
    pub conv: DepthwiseConv,
    pub pointwise: PointwiseConv,
    pub pool: usize,
    pub dropout: f64,
}

impl TemporalBranch {
    pub fn new(store: &mut ParamStore, channels: usize, kernel: usize, pool: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: DepthwiseConv::new(store, "temporal.conv", channels, kernel, rng),
            pointwise: PointwiseConv::new(store, "temporal.pointwise", channels, channels, rng),
            pool,
            dropout,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let c = self.conv.forward(g, store, x)?;
        let a = g.elu(c);
        let p = avg_pool(g, a, self.pool)?;
        let d = dropout(g, ctx, p, self.dropout);
        self.pointwise.forward(g, store, d)
    }
}

/// Neighbour-channel conv → depthwise-separable conv (depthwise temporal,
/// ELU, average pool, dropout, point-wise).
#[derive(Debug, Clone)]
pub struct SpatialBranch {
    pub neighbor: NeighborConv,
    pub depthwise: DepthwiseConv,
    pub pointwise: PointwiseConv,
    pub pool: usize,
    pub dropout: f64,
}

impl SpatialBranch {
    pub fn new(store: &mut ParamStore, channels: usize, spatial_kernel: usize, kernel: usize, pool: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            neighbor: NeighborConv::new(store, "spatial.neighbor", channels, spatial_kernel, rng),
            depthwise: DepthwiseConv::new(store, "spatial.depthwise", channels, kernel, rng),
            pointwise: PointwiseConv::new(store, "spatial.pointwise", channels, channels, rng),
            pool,
            dropout,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let n = self.neighbor.forward(g, store, x)?;
        let d = self.depthwise.forward(g, store, n)?;
        let a = g.elu(d);
        let p = avg_pool(g, a, self.pool)?;
        let dr = dropout(g, ctx, p, self.dropout);
        self.pointwise.forward(g, store, dr)
    }
}

/// Channel attention over the concatenated branch features, then
/// point-wise conv → BN → ELU → adaptive average pooling.
#[derive(Debug, Clone)]
pub struct AttentionFuse {
    pub squeeze: PointwiseConv,
    pub excite: PointwiseConv,
    pub pointwise: PointwiseConv,
    pub norm: BatchNorm,
    pub out_width: usize,
}

pub struct FuseOutput {
    pub features: Var,
    /// Sigmoid channel weights `[B, C, 1]`.
    pub weights: Var,
    /// Batch-normalized features before the ELU.
    pub pre_activation: Var,
}

impl AttentionFuse {
    pub fn new(store: &mut ParamStore, channels: usize, reduction: usize, out_width: usize, rng: &mut ChaCha8Rng) -> Self {
        let hidden = (channels / reduction).max(1);
        Self {
            squeeze: PointwiseConv::new(store, "fuse.squeeze", channels, hidden, rng),
            excite: PointwiseConv::new(store, "fuse.excite", hidden, channels, rng),
            pointwise: PointwiseConv::new(store, "fuse.pointwise", channels, channels, rng),
            norm: BatchNorm::new(store, "fuse.norm", channels),
            out_width,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, ctx: &mut Ctx, temporal: Var, spatial: Var) -> Result<FuseOutput> {
        if g.shape(temporal) != g.shape(spatial) {
            return Err(Error::Argument(format!(
                "attention fuse: temporal {:?} vs spatial {:?}",
                g.shape(temporal),
                g.shape(spatial)
            )));
        }
        let cat = g.concat(&[temporal, spatial], 2)?;
        let pooled = g.mean_axis(cat, 2);
        let s = self.squeeze.forward(g, store, pooled)?;
        let s = g.elu(s);
        let e = self.excite.forward(g, store, s)?;
        let weights = g.sigmoid(e);
        let weighted = g.mul_bcast(cat, weights)?;
        let p = self.pointwise.forward(g, store, weighted)?;
        let pre_activation = self.norm.forward(g, store, ctx, p)?;
        let a = g.elu(pre_activation);
        let features = g.adaptive_avg_pool(a, self.out_width)?;
        Ok(FuseOutput {
            features,
            weights,
            pre_activation,
        })
    }
}
