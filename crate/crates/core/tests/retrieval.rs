use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavegate::retrieval::{evaluate, rank_gallery, topk_accuracy, zero_shot_classify, MlpHead, Ranking};
use wavegate::selfcheck::random_unit;
use wavegate::Embedding;

fn brute_force(q: &Embedding, g: &Embedding) -> Vec<Vec<usize>> {
    (0..q.rows())
        .map(|b| {
            let scores: Vec<f64> = (0..g.rows())
                .map(|i| q.row(b).iter().zip(g.row(i)).map(|(x, y)| x * y).sum())
                .collect();
            let mut idx: Vec<usize> = (0..g.rows()).collect();
            // stable sort keeps ascending index among equal scores
            idx.sort_by(|&a, &c| scores[c].partial_cmp(&scores[a]).unwrap());
            idx
        })
        .collect()
}

#[test]
fn orthonormal_gallery_ranks_matching_row_first() {
    let rows: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let gallery = Embedding::from_rows(&rows).unwrap();
    let query = Embedding::from_rows(&[rows[3].clone()]).unwrap();
    let r = zero_shot_classify(&query, &gallery).unwrap();
    assert_eq!(r.rows()[0], vec![3, 0, 1, 2, 4]);
}

#[test]
fn five_by_ten_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let q = random_unit(&mut rng, 5, 8);
    let g = random_unit(&mut rng, 10, 8);
    let r = zero_shot_classify(&q, &g).unwrap();
    assert_eq!(r.rows(), brute_force(&q, &g).as_slice());
}

#[test]
fn dimension_mismatch_is_an_argument_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let e = zero_shot_classify(&random_unit(&mut rng, 2, 4), &random_unit(&mut rng, 3, 5)).unwrap_err();
    assert!(e.is_usage());
}

#[test]
fn k_larger_than_gallery_is_rejected() {
    let r = Ranking::new(vec![vec![0, 1, 2]]).unwrap();
    assert!(topk_accuracy(&r, &[0], 4).is_err());
    assert_eq!(topk_accuracy(&r, &[2], 3).unwrap(), 1.0);
}

#[test]
fn perfect_ranking_scores_one_for_every_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = random_unit(&mut rng, 12, 16);
    let truth: Vec<usize> = (0..12).collect();
    let r = zero_shot_classify(&g, &g).unwrap();
    for k in 1..=12 {
        assert_eq!(topk_accuracy(&r, &truth, k).unwrap(), 1.0);
    }
    let acc = evaluate(&g, &g, &truth).unwrap();
    assert_eq!((acc.top1, acc.top5), (1.0, 1.0));
}

#[test]
fn mlp_width_mismatch_is_rejected() {
    let head = MlpHead::zeros(4, 3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(head.forward(&random_unit(&mut rng, 2, 5)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ranking_matches_brute_force(seed in any::<u64>(), b in 1usize..8, g in 1usize..65, d in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_unit(&mut rng, b, d);
        let gal = random_unit(&mut rng, g, d);
        let r = zero_shot_classify(&q, &gal).unwrap();
        prop_assert_eq!(r.rows().to_vec(), brute_force(&q, &gal));
    }

    #[test]
    fn positive_scaling_keeps_order(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_unit(&mut rng, 1, 6);
        let gal = random_unit(&mut rng, 20, 6);
        let scaled: Vec<f64> = q.row(0).iter().map(|x| x * scale).collect();
        prop_assert_eq!(rank_gallery(q.row(0), &gal), rank_gallery(&scaled, &gal));
    }

    #[test]
    fn accuracy_grows_with_k(seed in any::<u64>(), g in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_unit(&mut rng, 10, 4);
        let gal = random_unit(&mut rng, g, 4);
        let truth: Vec<usize> = (0..10).map(|_| rng.random_range(0..g)).collect();
        let r = zero_shot_classify(&q, &gal).unwrap();
        let accs: Vec<f64> = (1..=g).map(|k| topk_accuracy(&r, &truth, k).unwrap()).collect();
        prop_assert!(accs.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(accs[g - 1], 1.0);
    }
}
