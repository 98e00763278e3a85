//! Channel-wise single-level Haar (db1) wavelet transform, its inverse, and
//! the fusion of reconstructed features with the originals.
//!
//! Conventions, per `(batch, channel)` trace `x` of even length `T`:
//!
//! ```text
//! cA[i] = (x[2i] + x[2i+1]) / sqrt(2)
//! cD[i] = (x[2i] - x[2i+1]) / sqrt(2)
//! ```
//!
//! The transform is orthonormal, so it conserves energy and is its own
//! inverse up to the interleaving of the two coefficient bands.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::channel_mix;
use crate::tensor::Tensor;

/// Approximation (low-pass) and detail (high-pass) coefficients, each `B x C x T/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPair {
    pub approx: Tensor,
    pub detail: Tensor,
}

fn check_even_3d(shape: &[usize]) -> Result<()> {
    if shape.len() != 3 {
        return Err(Error::Argument(format!("expected B x C x T, got {shape:?}")));
    }
    if shape[2] % 2 != 0 || shape[2] == 0 {
        return Err(Error::Argument(format!(
            "Haar DWT needs an even time axis, got T = {}; pad first",
            shape[2]
        )));
    }
    Ok(())
}

pub fn dwt_forward(x: &Tensor) -> Result<WaveletPair> {
    check_even_3d(x.shape())?;
    if !x.all_finite() {
        return Err(Error::Argument("DWT input contains non-finite values".into()));
    }
    let half = x.shape()[2] / 2;
    let n = x.len() / 2;
    let mut approx = Vec::with_capacity(n);
    let mut detail = Vec::with_capacity(n);
    for pair in x.data().chunks_exact(2) {
        approx.push((pair[0] + pair[1]) * FRAC_1_SQRT_2);
        detail.push((pair[0] - pair[1]) * FRAC_1_SQRT_2);
    }
    let shape = vec![x.shape()[0], x.shape()[1], half];
    Ok(WaveletPair {
        approx: Tensor::from_parts(shape.clone(), approx),
        detail: Tensor::from_parts(shape, detail),
    })
}

pub fn dwt_inverse(w: &WaveletPair) -> Result<Tensor> {
    if w.approx.shape() != w.detail.shape() || w.approx.rank() != 3 {
        return Err(Error::Argument(format!(
            "approx {:?} and detail {:?} must share a B x C x T/2 shape",
            w.approx.shape(),
            w.detail.shape()
        )));
    }
    let mut out = Vec::with_capacity(w.approx.len() * 2);
    for (&a, &d) in w.approx.data().iter().zip(w.detail.data()) {
        out.push((a + d) * FRAC_1_SQRT_2);
        out.push((a - d) * FRAC_1_SQRT_2);
    }
    let s = w.approx.shape();
    Ok(Tensor::from_parts(vec![s[0], s[1], s[2] * 2], out))
}

fn haar_matrix() -> Tensor {
    // symmetric and orthonormal: analysis and synthesis share it
    Tensor::from_parts(vec![2, 2], vec![FRAC_1_SQRT_2, FRAC_1_SQRT_2, FRAC_1_SQRT_2, -FRAC_1_SQRT_2])
}

/// Differentiable forward transform; returns `(approx, detail)` nodes.
pub fn dwt_forward_graph(g: &mut Graph, x: Var) -> Result<(Var, Var)> {
    let s = g.shape(x).to_vec();
    check_even_3d(&s)?;
    let pairs = g.reshape(x, &[s[0], s[1], s[2] / 2, 2])?;
    let h = g.constant(haar_matrix());
    let coeffs = g.matmul(pairs, h)?;
    let a = g.slice(coeffs, 3, 0, 1)?;
    let d = g.slice(coeffs, 3, 1, 1)?;
    let shape = [s[0], s[1], s[2] / 2];
    Ok((g.reshape(a, &shape)?, g.reshape(d, &shape)?))
}

/// Differentiable inverse transform.
pub fn dwt_inverse_graph(g: &mut Graph, approx: Var, detail: Var) -> Result<Var> {
    let s = g.shape(approx).to_vec();
    if s != g.shape(detail) || s.len() != 3 {
        return Err(Error::Argument(format!(
            "approx {:?} and detail {:?} must share a B x C x T/2 shape",
            s,
            g.shape(detail)
        )));
    }
    let a = g.reshape(approx, &[s[0], s[1], s[2], 1])?;
    let d = g.reshape(detail, &[s[0], s[1], s[2], 1])?;
    let coeffs = g.concat(&[a, d], 3)?;
    let h = g.constant(haar_matrix());
    let pairs = g.matmul(coeffs, h)?;
    g.reshape(pairs, &[s[0], s[1], s[2] * 2])
}

/// Parameters of the fusion step for `C` channels.
///
/// `weight` is the affine map over the concatenated `[original; reconstructed]`
/// channel axis, stored `[2C, C]` (input-major); `conv_weight` is the width-1
/// convolution back to `C` channels, stored `[C, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FuseParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub conv_weight: Tensor,
    pub conv_bias: Tensor,
}

impl FuseParams {
    /// Averages the two inputs and passes the result through unchanged;
    /// with `reconstructed == original` the fusion is the identity.
    pub fn averaging(channels: usize) -> Self {
        let c = channels;
        let weight = Tensor::from_fn(&[2 * c, c], |i| {
            let (r, col) = (i / c, i % c);
            if r % c == col { 0.5 } else { 0.0 }
        });
        Self {
            weight,
            bias: Tensor::zeros(&[c]),
            conv_weight: identity(c),
            conv_bias: Tensor::zeros(&[c]),
        }
    }

    pub fn channels(&self) -> usize {
        self.bias.len()
    }
}

pub(crate) fn identity(n: usize) -> Tensor {
    Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
}

/// `conv(W_f [original; reconstructed] + b_f)` as graph nodes.
pub fn fuse_graph(
    g: &mut Graph,
    original: Var,
    reconstructed: Var,
    weight: Var,
    bias: Var,
    conv_weight: Var,
    conv_bias: Var,
) -> Result<Var> {
    if g.shape(original) != g.shape(reconstructed) || g.shape(original).len() != 3 {
        return Err(Error::Argument(format!(
            "fuse: original {:?} vs reconstructed {:?}",
            g.shape(original),
            g.shape(reconstructed)
        )));
    }
    let stacked = g.concat(&[original, reconstructed], 1)?;
    let mixed = channel_mix(g, stacked, weight, bias)?;
    channel_mix(g, mixed, conv_weight, conv_bias)
}

pub fn fuse_features(original: &Tensor, reconstructed: &Tensor, params: &FuseParams) -> Result<Tensor> {
    let c = original.shape().get(1).copied().unwrap_or(0);
    if params.channels() != c || params.weight.shape() != [2 * c, c] || params.conv_weight.shape() != [c, c] {
        return Err(Error::Argument(format!(
            "fuse parameters for {} channels do not fit input {:?}",
            params.channels(),
            original.shape()
        )));
    }
    let mut g = Graph::new();
    let o = g.constant(original.clone());
    let r = g.constant(reconstructed.clone());
    let w = g.constant(params.weight.clone());
    let b = g.constant(params.bias.clone());
    let cw = g.constant(params.conv_weight.clone());
    let cb = g.constant(params.conv_bias.clone());
    let y = fuse_graph(&mut g, o, r, w, b, cw, cb)?;
    Ok(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn hand_values() {
        let w = dwt_forward(&t(&[1, 1, 2], &[1.0, 1.0])).unwrap();
        assert_abs_diff_eq!(w.approx.data()[0], 1.41421, epsilon = 1e-5);
        assert_eq!(w.detail.data()[0], 0.0);

        let w = dwt_forward(&t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_abs_diff_eq!(w.approx.data()[0], 2.12132, epsilon = 1e-5);
        assert_abs_diff_eq!(w.approx.data()[1], 4.94975, epsilon = 1e-5);
        assert_abs_diff_eq!(w.detail.data()[0], -0.70711, epsilon = 1e-5);
        assert_abs_diff_eq!(w.detail.data()[1], -0.70711, epsilon = 1e-5);
        // ‖x‖² = 30 = 58/2 + 2/2
        assert_abs_diff_eq!(w.approx.sum_sq() + w.detail.sum_sq(), 30.0, epsilon = 1e-12);

        let back = dwt_inverse(&w).unwrap();
        assert!(back.max_abs_diff(&t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0])) < 1e-6);
    }

    #[test]
    fn inverse_of_constant_pair() {
        let w = WaveletPair {
            approx: t(&[1, 1, 1], &[2f64.sqrt()]),
            detail: t(&[1, 1, 1], &[0.0]),
        };
        let x = dwt_inverse(&w).unwrap();
        assert_abs_diff_eq!(x.data()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x.data()[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zeros_give_zero_coefficients() {
        let w = dwt_forward(&Tensor::zeros(&[2, 3, 8])).unwrap();
        assert_eq!(w.approx.max_abs(), 0.0);
        assert_eq!(w.detail.max_abs(), 0.0);
    }

    #[test]
    fn odd_length_and_mismatch_are_rejected() {
        assert!(matches!(dwt_forward(&Tensor::zeros(&[1, 1, 3])), Err(Error::Argument(_))));
        let w = WaveletPair {
            approx: Tensor::zeros(&[1, 1, 2]),
            detail: Tensor::zeros(&[1, 1, 3]),
        };
        assert!(matches!(dwt_inverse(&w), Err(Error::Argument(_))));
    }

    #[test]
    fn graph_route_matches_direct_route() {
        let x = Tensor::from_fn(&[2, 3, 6], |i| ((i * 7919) % 13) as f64 - 6.0);
        let direct = dwt_forward(&x).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (a, d) = dwt_forward_graph(&mut g, xv).unwrap();
        assert!(g.value(a).max_abs_diff(&direct.approx) < 1e-12);
        assert!(g.value(d).max_abs_diff(&direct.detail) < 1e-12);
        let back = dwt_inverse_graph(&mut g, a, d).unwrap();
        assert!(g.value(back).max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn selector_weights_keep_only_original() {
        let c = 2;
        let mut p = FuseParams::averaging(c);
        p.weight = Tensor::from_fn(&[2 * c, c], |i| if i / c < c && i / c == i % c { 1.0 } else { 0.0 });
        p.conv_weight = t(&[2, 2], &[2.0, 1.0, 0.0, -1.0]);
        let original = Tensor::from_fn(&[1, 2, 3], |i| i as f64 + 1.0);
        let reconstructed = Tensor::from_fn(&[1, 2, 3], |i| 100.0 * i as f64);
        let out = fuse_features(&original, &reconstructed, &p).unwrap();
        // out[o, t] = sum_i conv[i, o] * original[i, t]
        for tt in 0..3 {
            let (x0, x1) = (original.at(&[0, 0, tt]), original.at(&[0, 1, tt]));
            assert_abs_diff_eq!(out.at(&[0, 0, tt]), 2.0 * x0, epsilon = 1e-12);
            assert_abs_diff_eq!(out.at(&[0, 1, tt]), x0 - x1, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_inputs_fuse_to_zero() {
        let p = FuseParams::averaging(3);
        let z = Tensor::zeros(&[2, 3, 4]);
        assert_eq!(fuse_features(&z, &z, &p).unwrap().max_abs(), 0.0);
        assert!(fuse_features(&z, &Tensor::zeros(&[2, 3, 2]), &p).is_err());
    }
}
