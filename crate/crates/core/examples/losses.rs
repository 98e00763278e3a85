//! The training objective on a random batch: alignment, MSE and the
//! batch-local clustering term, separately and combined.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wavegate::losses::{
    align_loss, batch_centers, clustering_loss, combined_loss, groups_from_labels, mse_loss, LossConfig,
};
use wavegate::selfcheck::random_unit;
use wavegate::Embedding;

fn main() -> wavegate::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let image = random_unit(&mut rng, 6, 16);
    let eeg = random_unit(&mut rng, 6, 16);
    let labels = ["dog", "cat", "dog", "fish", "cat", "dog"];
    let group_of = groups_from_labels(&labels);
    let cfg = LossConfig::default();

    println!("groups      {group_of:?}");
    println!("align       {:.5}", align_loss(&image, &eeg, cfg.temperature)?);
    println!("mse         {:.5}", mse_loss(&image, &eeg)?);
    let groups = batch_centers(&eeg, &group_of)?;
    println!("clustering  {:.5}", clustering_loss(&eeg, &groups, cfg.margin, cfg.epsilon)?);
    let total = combined_loss(&image, &eeg, &group_of, &cfg)?;
    println!("combined    {:.5}  (λ = {}, {}, {})", total.total, cfg.lambda1, cfg.lambda2, cfg.lambda3);

    // perfectly aligned pairs: only the contrastive spread remains
    let aligned = combined_loss(&eeg, &eeg, &group_of, &cfg)?;
    println!("aligned     {:.5}  (mse {:.1})", aligned.total, aligned.mse);

    let eye = Embedding::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])?;
    println!("orthonormal pair at τ = 1: {:.5}", align_loss(&eye, &eye, 1.0)?);
    Ok(())
}
