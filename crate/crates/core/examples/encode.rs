//! Build an encoder, inspect one traced forward pass, and round-trip its
//! parameters through a checkpoint file.

use wavegate::autograd::Graph;
use wavegate::checkpoint::{self, CheckpointMeta};
use wavegate::datasets::{SyntheticGenerator, SyntheticSpec};
use wavegate::layers::Ctx;
use wavegate::{Encoder, EncoderConfig};

fn main() -> wavegate::Result<()> {
    let cfg = EncoderConfig::tiny(16, 32, 24);
    let (encoder, store) = Encoder::init(cfg.clone(), 0)?;
    println!("{} trainable scalars in {} tensors", store.num_trainable_scalars(), store.len());

    let spec = SyntheticSpec {
        n_classes: 3,
        samples_per_class: 2,
        channels: 16,
        time: 32,
        embedding_dim: 24,
        signal_to_noise: 5.0,
        seed: 1,
    };
    let batch = SyntheticGenerator::new(spec)?.sample(2, 0)?;

    let mut g = Graph::new();
    let x = g.constant(batch.eeg.data().clone());
    let trace = encoder.forward_traced(&mut g, &store, &mut Ctx::inference(), x)?;
    for (name, v) in [
        ("input", trace.input),
        ("after DWT", trace.after_dwt),
        ("gated", trace.combined),
        ("temporal", trace.temporal),
        ("spatial", trace.spatial),
        ("fused", trace.fused.features),
        ("embedding", trace.embedding),
    ] {
        println!("{name:<10} {:?}", g.shape(v));
    }
    let gate = g.value(trace.gate.expect("both branches enabled"));
    let (lo, hi) = gate.data().iter().fold((1.0f64, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    println!("gate range [{lo:.3}, {hi:.3}]");

    let emb = encoder.encode(&store, &batch.eeg)?;
    println!("embedding norms within {:.1e} of 1", emb.max_norm_deviation());

    let path = std::env::temp_dir().join("wavegate-example.ckpt");
    let meta = CheckpointMeta { encoder: cfg, temperature: 0.07, epoch: 0, val_top1: 0.0 };
    checkpoint::save(&path, &meta, &store)?;
    let (reloaded, params, _) = checkpoint::load(&path)?;
    let again = reloaded.encode(&params, &batch.eeg)?;
    println!(
        "checkpoint {} bytes, max embedding change after f32 round trip {:.1e}",
        std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0),
        again.tensor().max_abs_diff(emb.tensor())
    );
    std::fs::remove_file(&path).ok();
    Ok(())
}
