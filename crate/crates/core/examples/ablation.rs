//! Train small variants that switch off one component or loss term each and
//! compare their validation accuracy.

use wavegate::datasets::{SyntheticGenerator, SyntheticSpec};
use wavegate::encoder::{EncoderConfig, GatePlacement};
use wavegate::training::{train, TrainConfig};

fn main() -> wavegate::Result<()> {
    let spec = SyntheticSpec {
        n_classes: 12,
        samples_per_class: 8,
        channels: 16,
        time: 32,
        embedding_dim: 24,
        signal_to_noise: 0.4,
        seed: 4,
    };
    let generator = SyntheticGenerator::new(spec)?;
    let (train_set, val_set) = (generator.sample(8, 0)?, generator.sample(3, 1)?);

    let base = TrainConfig {
        max_epochs: 15,
        learning_rate: 2e-3,
        batch_size: 16,
        patience: 5,
        encoder: EncoderConfig::tiny(16, 32, 24),
        ..TrainConfig::default()
    };
    let mut variants = vec![("full model", base.clone())];
    let mut v = base.clone();
    v.encoder.use_dwt = false;
    variants.push(("no DWT block", v));
    let mut v = base.clone();
    v.encoder.gate_placement = GatePlacement::LocalBranch;
    variants.push(("gate on local branch", v));
    let mut v = base.clone();
    v.encoder.use_global_branch = false;
    variants.push(("local branch only", v));
    let mut v = base.clone();
    v.loss.lambda2 = 0.0;
    variants.push(("no MSE term", v));
    let mut v = base.clone();
    v.loss.lambda3 = 0.0;
    variants.push(("no clustering term", v));

    println!("{:<22} {:>6} {:>8} {:>8} {:>8}", "variant", "epochs", "best", "top-1", "top-5");
    for (name, cfg) in variants {
        let out = train(&cfg, &train_set, &val_set)?;
        let best = &out.history[out.meta.epoch - 1];
        println!(
            "{name:<22} {:>6} {:>8} {:>8.3} {:>8.3}",
            out.history.len(),
            out.meta.epoch,
            best.val_top1,
            best.val_top5
        );
    }
    Ok(())
}
