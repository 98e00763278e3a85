//! Built-in property suite: wavelet round trips, finite-difference gradient
//! checks, and closed-form loss values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::Graph;
use crate::embedding::Embedding;
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::Result;
use crate::gradcheck::{check_gradient, GradCheck, GradReport};
use crate::layers::Ctx;
use crate::losses::{
    align_loss, align_loss_with_grad, batch_centers, clustering_loss, clustering_loss_with_grad, combined_loss_with_grad,
    mse_loss_with_grad, LossConfig,
};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::wavelet::{dwt_forward, dwt_inverse, fuse_features, fuse_graph, FuseParams};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    fn from_report(name: &str, r: &GradReport, tol: f64) -> Self {
        Self::new(
            name,
            r.passed(tol),
            format!("{} coords, max rel err {:.2e} (tol {tol:.0e})", r.checked, r.max_rel_err),
        )
    }
}

pub fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// `k` random unit rows of width `d`.
pub fn random_unit(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Embedding {
    Embedding::new(gaussian(rng, &[k, d])).expect("finite").normalized()
}

/// Round trip and energy over `n` random tensors with `B <= 4`, `C <= 8`,
/// even `T <= 64`.
pub fn wavelet_roundtrip(n: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut max_err, mut max_energy) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let shape = [rng.random_range(1..=4), rng.random_range(1..=8), 2 * rng.random_range(1..=32)];
        let x = gaussian(&mut rng, &shape);
        let Ok(w) = dwt_forward(&x) else {
            return CheckOutcome::new("wavelet round trip", false, format!("forward failed on {shape:?}"));
        };
        let Ok(y) = dwt_inverse(&w) else {
            return CheckOutcome::new("wavelet round trip", false, format!("inverse failed on {shape:?}"));
        };
        max_err = max_err.max(y.max_abs_diff(&x));
        let e_in = x.sum_sq();
        let e_out = w.approx.sum_sq() + w.detail.sum_sq();
        max_energy = max_energy.max((e_in - e_out).abs() / e_in.max(f64::MIN_POSITIVE));
    }
    CheckOutcome::new(
        "wavelet round trip",
        max_err <= 1e-5 && max_energy <= 1e-5,
        format!("{n} tensors, max error {max_err:.2e}, max energy drift {max_energy:.2e}"),
    )
}

/// Gradients of every loss with respect to the EEG rows on a `K=4, D=8` batch.
pub fn loss_gradients(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fi = random_unit(&mut rng, 4, 8);
    let fe = random_unit(&mut rng, 4, 8);
    let groups = [0, 1, 0, 1];
    let cfg = LossConfig::default();
    let tol = 1e-4;
    let x = fe.tensor().clone();
    let emb = |t: &Tensor| Embedding::new(t.clone()).expect("finite");
    let mut out = Vec::new();

    let (_, g) = align_loss_with_grad(&fi, &fe, cfg.temperature)?;
    // unnormalized probes are fine here: 1e-5 steps stay inside the 1e-3 norm tolerance
    let r = check_gradient(|t| align_loss(&fi, &emb(t), cfg.temperature).unwrap(), &x, &g, GradCheck::default());
    out.push(CheckOutcome::from_report("align_loss gradient", &r, tol));

    let (_, g) = mse_loss_with_grad(&fi, &fe)?;
    let r = check_gradient(|t| mse_loss_with_grad(&fi, &emb(t)).unwrap().0, &x, &g, GradCheck::default());
    out.push(CheckOutcome::from_report("mse_loss gradient", &r, tol));

    let (_, g) = clustering_loss_with_grad(&fe, &groups, cfg.margin, cfg.epsilon)?;
    let r = check_gradient(
        |t| clustering_loss_with_grad(&emb(t), &groups, cfg.margin, cfg.epsilon).unwrap().0,
        &x,
        &g,
        GradCheck::default(),
    );
    out.push(CheckOutcome::from_report("clustering_loss gradient", &r, tol));

    let (_, g) = combined_loss_with_grad(&fi, &fe, &groups, &cfg)?;
    let r = check_gradient(
        |t| combined_loss_with_grad(&fi, &emb(t), &groups, &cfg).unwrap().0.total,
        &x,
        &g,
        GradCheck::default(),
    );
    out.push(CheckOutcome::from_report("combined_loss gradient", &r, tol));
    Ok(out)
}

/// Gradient of `⟨R, fuse(orig, rec)⟩` with respect to both inputs and every
/// fusion parameter.
pub fn fuse_gradient(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, c, t) = (2, 3, 6);
    let params = FuseParams {
        weight: gaussian(&mut rng, &[2 * c, c]),
        bias: gaussian(&mut rng, &[c]),
        conv_weight: gaussian(&mut rng, &[c, c]),
        conv_bias: gaussian(&mut rng, &[c]),
    };
    let orig = gaussian(&mut rng, &[b, c, t]);
    let rec = gaussian(&mut rng, &[b, c, t]);
    let probe = gaussian(&mut rng, &[b, c, t]);
    let objective = |o: &Tensor, r: &Tensor, p: &FuseParams| -> f64 {
        let y = fuse_features(o, r, p).expect("valid shapes");
        y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };

    let mut g = Graph::new();
    let vars = [
        g.input(orig.clone()),
        g.input(rec.clone()),
        g.input(params.weight.clone()),
        g.input(params.bias.clone()),
        g.input(params.conv_weight.clone()),
        g.input(params.conv_bias.clone()),
    ];
    let y = fuse_graph(&mut g, vars[0], vars[1], vars[2], vars[3], vars[4], vars[5])?;
    let r = g.constant(probe.clone());
    let prod = g.mul(y, r)?;
    let loss = g.sum_all(prod)?;
    let grads = g.backward(loss)?;
    let grad = |i: usize| grads.get_or_zeros(vars[i], g.value(vars[i]).shape());

    let mut report = check_gradient(|o| objective(o, &rec, &params), &orig, &grad(0), GradCheck::default());
    report.merge(&check_gradient(|r| objective(&orig, r, &params), &rec, &grad(1), GradCheck::default()));
    let fields: [fn(&mut FuseParams) -> &mut Tensor; 4] = [
        |p| &mut p.weight,
        |p| &mut p.bias,
        |p| &mut p.conv_weight,
        |p| &mut p.conv_bias,
    ];
    for (k, field) in fields.iter().enumerate() {
        let mut base = params.clone();
        let x = field(&mut base).clone();
        let f = |t: &Tensor| {
            let mut p = params.clone();
            *field(&mut p) = t.clone();
            objective(&orig, &rec, &p)
        };
        report.merge(&check_gradient(f, &x, &grad(k + 2), GradCheck::default()));
    }
    Ok(CheckOutcome::from_report("fuse_features gradient", &report, 1e-4))
}

/// Finite-difference check of every encoder parameter tensor.
///
/// The embedding is L2-normalized, so its squared norm is constant; the
/// probe objective is `⟨R, encode(x)⟩` for a fixed random `R`. Batch norm
/// runs on batch statistics and dropout is off. A `fraction` of each
/// tensor's coordinates (at least one) is probed.
pub fn encoder_gradient_report(cfg: EncoderConfig, batch: usize, seed: u64, fraction: f64) -> Result<GradReport> {
    let cfg = EncoderConfig { dropout: 0.0, ..cfg };
    let (encoder, store) = Encoder::init(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x = gaussian(&mut rng, &[batch, cfg.channels, cfg.time]);
    let probe = gaussian(&mut rng, &[batch, cfg.embedding_dim]);
    let objective = |s: &ParamStore| -> f64 {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let mut ctx = Ctx::train(ChaCha8Rng::seed_from_u64(0));
        let y = encoder.forward(&mut g, s, &mut ctx, xv).expect("forward");
        g.value(y).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };

    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let mut ctx = Ctx::train(ChaCha8Rng::seed_from_u64(0));
    let y = encoder.forward(&mut g, &store, &mut ctx, xv)?;
    let r = g.constant(probe.clone());
    let prod = g.mul(y, r)?;
    let loss = g.sum_all(prod)?;
    let grads = g.backward(loss)?;

    let mut report = GradReport::empty();
    for (id, var) in g.bound_params() {
        if !store.is_trainable(id) {
            continue;
        }
        let value = store.value(id).clone();
        let n = value.len();
        let take = ((n as f64 * fraction).ceil() as usize).clamp(1, n);
        let mut idx: Vec<usize> = rand::seq::index::sample(&mut rng, n, take).into_vec();
        idx.sort_unstable();
        let analytic = grads.get_or_zeros(var, value.shape());
        let f = |t: &Tensor| {
            let mut s = store.clone();
            s.set(id, t.clone()).expect("same shape");
            objective(&s)
        };
        let opts = GradCheck {
            indices: Some(idx),
            ..GradCheck::default()
        };
        report.merge(&check_gradient(f, &value, &analytic, opts));
    }
    Ok(report)
}

pub fn encoder_gradient(seed: u64) -> Result<CheckOutcome> {
    let r = encoder_gradient_report(EncoderConfig::tiny(4, 8, 16), 3, seed, 0.01)?;
    Ok(CheckOutcome::from_report("encoder gradient (tiny config)", &r, 1e-3))
}

/// Closed-form loss values.
pub fn loss_identities() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let one = Embedding::from_rows(&[vec![0.6, 0.8]])?;
    let v = align_loss(&one, &one, 0.07)?;
    out.push(CheckOutcome::new("align_loss, K=1", v.abs() < 1e-12, format!("{v:.3e}")));

    let eye = Embedding::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])?;
    let v = align_loss(&eye, &eye, 1.0)?;
    let e = std::f64::consts::E;
    let expected = -(e / (e + 1.0)).ln();
    out.push(CheckOutcome::new(
        "align_loss, orthonormal pairs at temperature 1",
        (v - 0.31326).abs() <= 1e-5 && (v - expected).abs() < 1e-12,
        format!("{v:.6}"),
    ));

    let groups = batch_centers(&eye, &[0, 1])?;
    let v = clustering_loss(&eye, &groups, 0.5, 1e-8)?;
    out.push(CheckOutcome::new(
        "clustering_loss, samples at orthogonal centers",
        v.abs() <= 1e-6,
        format!("{v:.3e}"),
    ));
    Ok(out)
}

/// Every check, in order.
pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = vec![wavelet_roundtrip(1000, seed)];
    out.extend(loss_gradients(seed)?);
    out.push(fuse_gradient(seed)?);
    out.push(encoder_gradient(seed)?);
    out.extend(loss_identities()?);
    Ok(out)
}
