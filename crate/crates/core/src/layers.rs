//! Parameterized building blocks over [`Graph`].
//!
//! Each layer owns [`ParamId`]s into a shared [`ParamStore`] and binds them
//! into a graph on every forward call. Feature tensors are `[B, C, L]`
//! unless stated otherwise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{fan_in_uniform, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Per-forward state: train/inference mode, the dropout stream, and
/// batch-norm running statistics waiting to be committed.
pub struct Ctx {
    train: bool,
    rng: Option<ChaCha8Rng>,
    stat_updates: Vec<(ParamId, Tensor)>,
}

impl Ctx {
    pub fn inference() -> Self {
        Self {
            train: false,
            rng: None,
            stat_updates: Vec::new(),
        }
    }

    /// Training mode; `rng` drives dropout masks.
    pub fn train(rng: ChaCha8Rng) -> Self {
        Self {
            train: true,
            rng: Some(rng),
            stat_updates: Vec::new(),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Write pending running statistics into `store`.
    pub fn commit_stats(&mut self, store: &mut ParamStore) {
        for (id, v) in self.stat_updates.drain(..) {
            *store.value_mut(id) = v;
        }
    }
}

pub fn dropout(g: &mut Graph, ctx: &mut Ctx, x: Var, p: f64) -> Var {
    if !ctx.train || p <= 0.0 {
        return x;
    }
    let rng = ctx.rng.as_mut().expect("training ctx has an rng");
    let keep = 1.0 - p;
    let shape = g.shape(x).to_vec();
    let mask = Tensor::from_fn(&shape, |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
    let m = g.constant(mask);
    g.mul(x, m).expect("dropout mask shape")
}

/// Affine map over the last axis; weight stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = store.add(&format!("{name}.weight"), fan_in_uniform(rng, &[d_in, d_out], d_in), true);
        let bias = store.add(&format!("{name}.bias"), fan_in_uniform(rng, &[d_out], d_in), true);
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, Some(b))
    }
}

/// Mix along the channel axis of `x: [B, C_in, L]` with `w: [C_in, C_out]`, `b: [C_out]`.
pub fn channel_mix(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let t = g.permute(x, &[0, 2, 1]);
    let y = g.linear(t, w, Some(b))?;
    Ok(g.permute(y, &[0, 2, 1]))
}

/// Point-wise (kernel-1) convolution across channels.
#[derive(Debug, Clone)]
pub struct PointwiseConv {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl PointwiseConv {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let l = Linear::new(store, name, c_in, c_out, rng);
        Self {
            weight: l.weight,
            bias: l.bias,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        channel_mix(g, x, w, b)
    }
}

/// One kernel per channel along the time axis, "same" zero padding.
#[derive(Debug, Clone)]
pub struct DepthwiseConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
}

impl DepthwiseConv {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = store.add(&format!("{name}.weight"), fan_in_uniform(rng, &[channels, kernel], kernel), true);
        let bias = store.add(&format!("{name}.bias"), fan_in_uniform(rng, &[channels], kernel), true);
        Self { weight, bias, kernel }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let left = (self.kernel - 1) / 2;
        let y = g.depthwise_conv1d(x, w, left, self.kernel - 1 - left)?;
        add_channel_bias(g, y, b)
    }
}

/// Convolution over neighbouring channels (electrodes): each output channel
/// combines `kernel` adjacent input channels at the same time step.
#[derive(Debug, Clone)]
pub struct NeighborConv {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl NeighborConv {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(kernel % 2 == 1, "neighbor kernel must be odd");
        let weight = store.add(&format!("{name}.weight"), fan_in_uniform(rng, &[channels, kernel], kernel), true);
        let bias = store.add(&format!("{name}.bias"), fan_in_uniform(rng, &[channels], kernel), true);
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.neighbor_mix(x, w)?;
        add_channel_bias(g, y, b)
    }
}

/// `x[b, c, l] + bias[c]`
pub fn add_channel_bias(g: &mut Graph, x: Var, bias: Var) -> Result<Var> {
    let c = g.shape(x)[1];
    let b = g.reshape(bias, &[1, c, 1])?;
    g.add_bcast(x, b)
}

/// Batch normalization over `[B, C, L]`, statistics per channel.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(&format!("{name}.gamma"), Tensor::full(&[channels], 1.0), true),
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[channels]), true),
            running_mean: store.add(&format!("{name}.running_mean"), Tensor::zeros(&[channels]), false),
            running_var: store.add(&format!("{name}.running_var"), Tensor::full(&[channels], 1.0), false),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != store.value(self.gamma).len() {
            return Err(Error::Argument(format!("batch norm input {shape:?}")));
        }
        let c = shape[1];
        let xn = if ctx.train {
            let m = g.mean_axis(x, 2);
            let m = g.mean_axis(m, 0);
            let xc = g.sub_bcast(x, m)?;
            let sq = g.mul(xc, xc)?;
            let v = g.mean_axis(sq, 2);
            let v = g.mean_axis(v, 0);
            let n = (shape[0] * shape[2]) as f64;
            let (mv, vv) = (g.value(m).clone(), g.value(v).clone());
            let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let mom = self.momentum;
            let rm = store
                .value(self.running_mean)
                .zip_map(&mv.reshape(&[c])?, |r, b| (1.0 - mom) * r + mom * b);
            let rv = store
                .value(self.running_var)
                .zip_map(&vv.reshape(&[c])?, |r, b| (1.0 - mom) * r + mom * b * unbiased);
            ctx.stat_updates.push((self.running_mean, rm));
            ctx.stat_updates.push((self.running_var, rv));
            let ve = g.add_scalar(v, self.eps);
            let inv = g.powf(ve, -0.5);
            g.mul_bcast(xc, inv)?
        } else {
            let eps = self.eps;
            let mean = store.value(self.running_mean).clone().reshape(&[1, c, 1])?;
            let inv = store.value(self.running_var).map(|v| 1.0 / (v + eps).sqrt()).reshape(&[1, c, 1])?;
            let m = g.constant(mean);
            let s = g.constant(inv);
            let xc = g.sub_bcast(x, m)?;
            g.mul_bcast(xc, s)?
        };
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let gm = g.reshape(gamma, &[1, c, 1])?;
        let bt = g.reshape(beta, &[1, c, 1])?;
        let y = g.mul_bcast(xn, gm)?;
        g.add_bcast(y, bt)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add(&format!("{name}.gamma"), Tensor::full(&[width], 1.0), true),
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[width]), true),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, 1e-5)
    }
}

/// Non-overlapping average pooling over the last axis; a ragged tail is dropped.
pub fn avg_pool(g: &mut Graph, x: Var, kernel: usize) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let l = *shape.last().unwrap();
    let out = l / kernel;
    if out == 0 {
        return Err(Error::Argument(format!("avg_pool: kernel {kernel} longer than axis {l}")));
    }
    let last = shape.len() - 1;
    let cropped = if out * kernel == l { x } else { g.slice(x, last, 0, out * kernel)? };
    let mut s = shape.clone();
    s[last] = out;
    s.push(kernel);
    let r = g.reshape(cropped, &s)?;
    let m = g.mean_axis(r, last + 1);
    s.pop();
    g.reshape(m, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn avg_pool_preserves_constants_and_crops_tail() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[2, 3, 12], 4.5));
        let y = avg_pool(&mut g, x, 5).unwrap();
        assert_eq!(g.shape(y), &[2, 3, 2]);
        assert!(g.value(y).data().iter().all(|&v| (v - 4.5).abs() < 1e-12));
    }

    #[test]
    fn batch_norm_train_normalizes_and_records_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 2);
        let mut g = Graph::new();
        let x = g.constant(crate::params::uniform(&mut rng, &[4, 2, 5], 3.0));
        let mut ctx = Ctx::train(ChaCha8Rng::seed_from_u64(1));
        let y = bn.forward(&mut g, &store, &mut ctx, x).unwrap();
        let yv = g.value(y);
        for c in 0..2 {
            let vals: Vec<f64> = (0..4).flat_map(|b| (0..5).map(move |t| (b, t))).map(|(b, t)| yv.at(&[b, c, t])).collect();
            let m = vals.iter().sum::<f64>() / 20.0;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 20.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-3);
        }
        ctx.commit_stats(&mut store);
        assert!(store.value(bn.running_mean).max_abs() > 0.0);
    }

    #[test]
    fn dropout_is_identity_at_inference() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[3, 3], 1.0));
        let mut ctx = Ctx::inference();
        assert_eq!(dropout(&mut g, &mut ctx, x, 0.5), x);
    }
}
