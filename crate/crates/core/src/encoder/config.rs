use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which branch's features drive the gate, and receive weight `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatePlacement {
    GlobalBranch,
    LocalBranch,
}

/// Encoder hyper-parameters.
///
/// Shape table for the default `(B, 64, 100)` input with `feature_width = 128`:
///
/// | stage                                    | kernel / stride       | output         |
/// |------------------------------------------|-----------------------|----------------|
/// | DWT block (Haar, fuse)                   | 2 / 2, then 1         | `B x 64 x 100` |
/// | local: depthwise temporal conv           | 25 / 1, same pad      | `B x 64 x 100` |
/// | local: neighbour-channel conv, BN, ELU   | 3 channels            | `B x 64 x 100` |
/// | local: time projection                   | 100 → 128             | `B x 64 x 128` |
/// | global: time projection + transformer    | tokens = channels     | `B x 64 x 128` |
/// | gate (mean over features, 1x1, sigmoid)  |                       | `B x 64 x 1`   |
/// | temporal: depthwise conv, ELU, avg pool  | 25 / 1, then 5 / 5    | `B x 64 x 25`  |
/// | temporal: point-wise conv                | 1                     | `B x 64 x 25`  |
/// | spatial: neighbour conv, depthwise, ELU  | 3 channels, 5 / 1     | `B x 64 x 128` |
/// | spatial: avg pool, point-wise conv       | 5 / 5, 1              | `B x 64 x 25`  |
/// | fuse: concat, channel attention          | bottleneck 64 → 16    | `B x 64 x 50`  |
/// | fuse: point-wise, BN, ELU, adaptive pool | 1, → 8                | `B x 64 x 8`   |
/// | projection + L2 normalization            | 512 → 1024            | `B x 1024`     |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub channels: usize,
    pub time: usize,
    pub embedding_dim: usize,
    pub attention_heads: usize,
    pub transformer_layers: usize,
    pub gate_placement: GatePlacement,
    pub use_dwt: bool,
    pub use_local_branch: bool,
    pub use_global_branch: bool,
    pub dropout: f64,
    /// Width `F` of the local/global branch features.
    pub feature_width: usize,
    pub temporal_kernel: usize,
    pub pool: usize,
    pub spatial_kernel: usize,
    pub separable_kernel: usize,
    pub attention_reduction: usize,
    pub ffn_multiplier: usize,
    /// Width after the final adaptive pooling.
    pub fused_width: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            time: 100,
            embedding_dim: 1024,
            attention_heads: 8,
            transformer_layers: 1,
            gate_placement: GatePlacement::GlobalBranch,
            use_dwt: true,
            use_local_branch: true,
            use_global_branch: true,
            dropout: 0.25,
            feature_width: 128,
            temporal_kernel: 25,
            pool: 5,
            spatial_kernel: 3,
            separable_kernel: 5,
            attention_reduction: 4,
            ffn_multiplier: 2,
            fused_width: 8,
        }
    }
}

impl EncoderConfig {
    /// Small configuration for desk-scale runs on `channels x time` inputs.
    pub fn tiny(channels: usize, time: usize, embedding_dim: usize) -> Self {
        Self {
            channels,
            time,
            embedding_dim,
            attention_heads: 2,
            feature_width: 16,
            temporal_kernel: 9,
            pool: 4,
            separable_kernel: 3,
            fused_width: 4,
            dropout: 0.1,
            ..Self::default()
        }
    }

    /// Width after each multi-branch stage.
    pub fn branch_width(&self) -> usize {
        self.feature_width / self.pool
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("embedding_dim", self.embedding_dim),
            ("attention_heads", self.attention_heads),
            ("transformer_layers", self.transformer_layers),
            ("feature_width", self.feature_width),
            ("temporal_kernel", self.temporal_kernel),
            ("pool", self.pool),
            ("spatial_kernel", self.spatial_kernel),
            ("separable_kernel", self.separable_kernel),
            ("attention_reduction", self.attention_reduction),
            ("ffn_multiplier", self.ffn_multiplier),
            ("fused_width", self.fused_width),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be >= 1"));
            }
        }
        if self.time < 2 {
            return Err(Error::config("time", "must be >= 2"));
        }
        if self.use_dwt && self.time % 2 != 0 {
            return Err(Error::config("time", "must be even when use_dwt is set (pad the data first)"));
        }
        if self.embedding_dim % self.attention_heads != 0 {
            return Err(Error::config(
                "attention_heads",
                format!("embedding_dim {} is not divisible by {}", self.embedding_dim, self.attention_heads),
            ));
        }
        if self.feature_width % self.attention_heads != 0 {
            return Err(Error::config(
                "attention_heads",
                format!("feature_width {} is not divisible by {}", self.feature_width, self.attention_heads),
            ));
        }
        if !self.use_local_branch && !self.use_global_branch {
            return Err(Error::config("use_local_branch", "at least one of the local/global branches must be enabled"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        if self.spatial_kernel % 2 == 0 {
            return Err(Error::config("spatial_kernel", "must be odd"));
        }
        if self.branch_width() == 0 {
            return Err(Error::config("pool", "pooling leaves no features; lower pool or raise feature_width"));
        }
        if self.fused_width > 2 * self.branch_width() {
            return Err(Error::config(
                "fused_width",
                format!("must be <= {} (twice the pooled branch width)", 2 * self.branch_width()),
            ));
        }
        Ok(())
    }
}
