use std::io::Cursor;

use proptest::prelude::*;
use wavegate::semantic::{
    categorize, parse_taxonomy, score_image, summarize, Category, Rule, Taxonomy, TopK,
};

const TOY: &str = include_str!("../fixtures/toy_taxonomy.jsonl");

fn toy() -> Taxonomy {
    parse_taxonomy(Cursor::new(TOY)).unwrap()
}

fn parse(lines: &[&str]) -> wavegate::Result<Taxonomy> {
    parse_taxonomy(Cursor::new(lines.join("\n")))
}

#[test]
fn toy_counts_match_hand_count() {
    let t = toy();
    assert_eq!(t.len(), 5);
    assert_eq!(t.root_ids(), vec!["entity.n.01"]);
    let arity: Vec<usize> = (0..t.len()).map(|i| t.node(i).parents.len()).collect();
    assert_eq!(arity, vec![0, 1, 1, 1, 1]);
    assert_eq!(t.depth("dog.n.01").unwrap(), 3);
    assert_eq!(t.depth("fish.n.01").unwrap(), 2);
}

#[test]
fn toy_similarities() {
    let t = toy();
    assert!((t.wu_palmer("dog.n.01", "cat.n.01").unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((t.wu_palmer("dog.n.01", "fish.n.01").unwrap() - 0.4).abs() < 1e-12);
    assert_eq!(t.wu_palmer("cat.n.01", "cat.n.01").unwrap(), 1.0);
    assert!(t.wu_palmer("dog.n.01", "nope").is_err());
}

#[test]
fn two_node_chain_and_self_parent() {
    let t = parse(&[
        r#"{"id": "r", "lemmas": ["r"], "parents": []}"#,
        r#"{"id": "c", "lemmas": ["c"], "parents": ["r"]}"#,
    ])
    .unwrap();
    assert_eq!(t.depth("r").unwrap(), 1);
    assert_eq!(t.depth("c").unwrap(), 2);
    let e = parse(&[r#"{"id": "x", "lemmas": ["x"], "parents": ["x"]}"#]).unwrap_err().to_string();
    assert!(e.contains("cycle") && e.contains('x'), "{e}");
}

#[test]
fn duplicate_and_dangling_ids_are_format_errors() {
    let dup = parse(&[
        r#"{"id": "r", "lemmas": ["r"], "parents": []}"#,
        r#"{"id": "r", "lemmas": ["s"], "parents": []}"#,
    ])
    .unwrap_err();
    assert!(dup.is_usage() && dup.to_string().contains('r'));
    let dangling = parse(&[r#"{"id": "a", "lemmas": ["a"], "parents": ["ghost"]}"#]).unwrap_err();
    assert!(dangling.to_string().contains("ghost"));
}

#[test]
fn diamond_depth_takes_shortest_path() {
    // r <- a <- x and r <- b <- c <- x
    let t = parse(&[
        r#"{"id": "r", "lemmas": ["r"], "parents": []}"#,
        r#"{"id": "a", "lemmas": ["a"], "parents": ["r"]}"#,
        r#"{"id": "b", "lemmas": ["b"], "parents": ["r"]}"#,
        r#"{"id": "c", "lemmas": ["c"], "parents": ["b"]}"#,
        r#"{"id": "x", "lemmas": ["x"], "parents": ["a", "c"]}"#,
    ])
    .unwrap();
    assert_eq!(t.depth("x").unwrap(), 3);
}

#[test]
fn rule_examples() {
    let t = toy();
    let r = score_image("i", "dog", &TopK::from_pairs(&[("dog", 0.41), ("cat", 0.2)]).unwrap(), &t).unwrap();
    assert_eq!((r.score, r.rule), (1.0, Rule::ExactTop1));
    let topk = TopK::from_pairs(&[("cat", 0.35), ("dog", 0.3), ("domestic dog", 0.2)]).unwrap();
    let r = score_image("i", "dog", &topk, &t).unwrap();
    assert_eq!(r.rule, Rule::Top5Sum);
    assert!((r.score - 0.5).abs() < 1e-12);
    let topk = TopK::from_pairs(&[("cat", 0.5), ("fish", 0.3)]).unwrap();
    let r = score_image("i", "dog", &topk, &t).unwrap();
    assert_eq!(r.rule, Rule::WordnetFallback);
    assert!((r.score - (0.5 * 2.0 / 3.0 + 0.3 * 0.4)).abs() < 1e-12);
    assert!((r.score - 0.45333).abs() < 1e-5);
}

#[test]
fn unresolvable_truth_names_the_label() {
    let e = score_image("i", "bator4", &TopK::from_pairs(&[("dog", 0.9)]).unwrap(), &toy()).unwrap_err();
    assert!(e.to_string().contains("bator4"));
}

#[test]
fn categorize_examples() {
    let (cats, mean, std) = categorize(&[0.9, 0.5, 0.1]).unwrap();
    assert_eq!(cats, vec![Category::Good, Category::Intermediate, Category::Bad]);
    assert!((mean - 0.5).abs() < 1e-12);
    assert!((std - 0.32660).abs() < 1e-5);
    let (cats, _, _) = categorize(&[0.3; 4]).unwrap();
    assert!(cats.iter().all(|&c| c == Category::Intermediate));
    // 1 and 0 sit exactly on mean ± std
    let (cats, _, _) = categorize(&[1.0, 0.0]).unwrap();
    assert!(cats.iter().all(|&c| c == Category::Intermediate));
    assert!(categorize(&[0.4]).is_err());
}

#[test]
fn summary_examples() {
    assert_eq!(summarize(&[0.7]).unwrap().to_string(), "0.700 ± 0.000");
    assert_eq!(summarize(&[1.0, 0.0]).unwrap().to_string(), "0.500 ± 0.500");
    assert!(summarize(&[]).is_err());
}

#[test]
fn twenty_scores_match_running_sums() {
    let scores = [
        0.12, 0.98, 0.45333, 0.5, 1.0, 0.0, 0.33, 0.71, 0.27, 0.64, 0.05, 0.88, 0.42, 0.19, 0.56, 0.77, 0.31, 0.93,
        0.08, 0.6,
    ];
    // single-pass sums, as a spreadsheet would compute them
    let (mut s, mut s2) = (0.0f64, 0.0f64);
    for x in scores {
        s += x;
        s2 += x * x;
    }
    let n = scores.len() as f64;
    let mean = s / n;
    let std = (s2 / n - mean * mean).sqrt();
    let got = summarize(&scores).unwrap();
    assert_eq!(got.count, 20);
    assert!((got.mean - mean).abs() < 1e-9);
    assert!((got.std - std).abs() < 1e-9);
}

fn topk_strategy() -> impl Strategy<Value = Vec<(usize, f64)>> {
    prop::collection::vec((0usize..6, 0.0f64..1.0), 1..=5).prop_map(|mut v| {
        let total: f64 = v.iter().map(|p| p.1).sum::<f64>().max(1.0);
        for p in &mut v {
            p.1 /= total;
        }
        v.sort_by(|a, b| b.1.total_cmp(&a.1));
        v
    })
}

const LABELS: [&str; 6] = ["dog", "cat", "fish", "animal", "entity", "unicorn"];

fn topk(v: &[(usize, f64)]) -> TopK {
    let pairs: Vec<(&str, f64)> = v.iter().map(|&(l, p)| (LABELS[l], p)).collect();
    TopK::from_pairs(&pairs).unwrap()
}

proptest! {
    #[test]
    fn scores_lie_in_unit_interval(v in topk_strategy(), truth in 0usize..5) {
        let r = score_image("i", LABELS[truth], &topk(&v), &toy()).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&r.score));
    }

    #[test]
    fn raising_a_match_never_lowers_the_score(
        others in prop::collection::vec((1usize..6, 0.05f64..1.0), 1..4),
        mass in 0.2f64..0.6,
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
    ) {
        let total: f64 = others.iter().map(|o| o.1).sum();
        let others: Vec<(usize, f64)> = others.iter().map(|&(l, p)| (l, p * mass / total)).collect();
        let cap = others.iter().map(|o| o.1).fold(0.0, f64::max).min(1.0 - mass);
        let (lo, hi) = (a.min(b) * cap, a.max(b) * cap);
        let t = toy();
        let score = |q: f64| {
            let mut v = others.clone();
            v.push((0, q));
            // "dog" never takes the top-1 slot, so rule 1 stays out of play
            v.sort_by(|x, y| y.1.total_cmp(&x.1).then((x.0 == 0).cmp(&(y.0 == 0))));
            score_image("i", "dog", &topk(&v), &t).unwrap().score
        };
        prop_assert!(score(hi) >= score(lo) - 1e-12);
    }

    #[test]
    fn categorize_partitions(scores in prop::collection::vec(0.0f64..1.0, 2..40)) {
        let (cats, mean, std) = categorize(&scores).unwrap();
        prop_assert_eq!(cats.len(), scores.len());
        for (c, s) in cats.iter().zip(&scores) {
            let expect = if *s > mean + std { Category::Good } else if *s < mean - std { Category::Bad } else { Category::Intermediate };
            prop_assert_eq!(*c, expect);
        }
    }

    #[test]
    fn wu_palmer_is_symmetric_and_bounded(a in 0usize..5, b in 0usize..5) {
        let t = toy();
        let x = t.wu_palmer_idx(a, b).unwrap();
        prop_assert_eq!(x, t.wu_palmer_idx(b, a).unwrap());
        prop_assert!(x > 0.0 && x <= 1.0);
    }
}
