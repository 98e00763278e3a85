//! Zero-shot retrieval against a gallery of class embeddings, and the
//! optional MLP head trained on the same vectors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use wavegate::retrieval::{evaluate, zero_shot_classify, MlpHead};
use wavegate::selfcheck::random_unit;
use wavegate::{Embedding, Tensor};

fn main() -> wavegate::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (classes, dim, per_class) = (20, 32, 5);
    let gallery = random_unit(&mut rng, classes, dim);

    // queries: gallery rows plus noise
    let noise = Normal::new(0.0, 0.15).expect("valid sigma");
    let mut truth = Vec::new();
    let rows: Vec<Vec<f64>> = (0..classes * per_class)
        .map(|i| {
            let c = i / per_class;
            truth.push(c);
            gallery.row(c).iter().map(|v| v + noise.sample(&mut rng)).collect()
        })
        .collect();
    let queries = Embedding::from_rows(&rows)?.normalized();

    let ranking = zero_shot_classify(&queries, &gallery)?;
    println!("query 0 top-5 gallery rows: {:?}", &ranking.rows()[0][..5]);
    let acc = evaluate(&queries, &gallery, &truth)?;
    println!("zero-shot top-1 {:.3}, top-5 {:.3} (chance {:.3})", acc.top1, acc.top5, 1.0 / classes as f64);

    let mut head = MlpHead::random(dim, 64, classes, 0);
    let loss = head.fit(&queries, &truth, 30, 1e-2, 0)?;
    let predicted = head.predict(&queries)?;
    let correct = predicted.iter().zip(&truth).filter(|(p, t)| p == t).count();
    println!("mlp head: final loss {loss:.4}, train accuracy {:.3}", correct as f64 / truth.len() as f64);

    let uniform = MlpHead::zeros(dim, 8, 4).forward(&Embedding::new(Tensor::full(&[1, dim], 0.1))?.normalized())?;
    println!("zero head scores {:?}", uniform.data());
    Ok(())
}
