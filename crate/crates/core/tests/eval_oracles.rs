//! Entropy, top-k truncation, span decoding and span F1 against independent oracles.

use std::collections::BTreeSet;

mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xnlu_core::entropy::{entropy, topk_entropy};
use xnlu_core::metrics::{decode_bio_spans, slot_span_f1, Span};

use common::oracles::{entropy_oracle, spans_oracle, topk_oracle};

fn random_weights(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(1..200);
    let mut w: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3)).collect();
    if rng.random_bool(0.3) {
        w[rng.random_range(0..n)] = 0.0;
    }
    w[0] += 1e-3;
    w
}

#[test]
fn entropy_matches_direct_formula_on_1000_lists() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let w = random_weights(&mut rng);
        let got = entropy(&w).unwrap();
        assert!((got - entropy_oracle(&w)).abs() < 1e-9, "{w:?}");
    }
}

#[test]
fn topk_matches_sort_and_slice_on_1000_lists() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..1000 {
        let w = random_weights(&mut rng);
        let k = [100, 50, 10, 5, 1, 33][i % 6];
        let got = topk_entropy(&w, k as f64).unwrap();
        assert!((got - topk_oracle(&w, k)).abs() < 1e-9, "k={k} {w:?}");
    }
    let w: Vec<f64> = (0..100).map(|i| ((i * 37) % 101) as f64 + 1.0).collect();
    assert!((topk_entropy(&w, 10.0).unwrap() - topk_oracle(&w, 10)).abs() < 1e-12);
}

const TAGS: [&str; 7] = ["O", "B-a", "I-a", "B-b", "I-b", "B-c", "I-c"];

fn random_tags(rng: &mut ChaCha8Rng) -> Vec<&'static str> {
    let n = rng.random_range(1..15);
    (0..n).map(|_| TAGS[rng.random_range(0..TAGS.len())]).collect()
}

#[test]
fn span_decoding_matches_interval_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let tags = random_tags(&mut rng);
        let got: BTreeSet<Span> = decode_bio_spans(&tags).unwrap().into_iter().collect();
        assert_eq!(got, spans_oracle(&tags), "{tags:?}");
    }
}

#[test]
fn span_f1_matches_brute_force_matcher() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    let (mut n_pred, mut n_gold, mut hits) = (0usize, 0usize, 0usize);
    for _ in 0..1000 {
        let g = random_tags(&mut rng);
        let p: Vec<&str> = g
            .iter()
            .map(|&t| if rng.random_bool(0.2) { TAGS[rng.random_range(0..TAGS.len())] } else { t })
            .collect();
        let (ps, gs) = (spans_oracle(&p), spans_oracle(&g));
        n_pred += ps.len();
        n_gold += gs.len();
        hits += ps.intersection(&gs).count();
        pred.push(p);
        gold.push(g);
    }
    let scores = slot_span_f1(&pred, &gold).unwrap();
    let precision = 100.0 * hits as f64 / n_pred as f64;
    let recall = 100.0 * hits as f64 / n_gold as f64;
    assert_eq!((scores.correct, scores.predicted, scores.gold), (hits, n_pred, n_gold));
    assert!((scores.precision - precision).abs() < 1e-9);
    assert!((scores.recall - recall).abs() < 1e-9);
    assert!((scores.f1 - 2.0 * precision * recall / (precision + recall)).abs() < 1e-9);
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..10.0, 1..60).prop_filter("needs a positive weight", |w| w.iter().any(|&x| x > 0.0))
}

fn tag_seq() -> impl Strategy<Value = Vec<&'static str>> {
    prop::collection::vec(prop::sample::select(TAGS.to_vec()), 1..12)
}

proptest! {
    #[test]
    fn uniform_lists_have_log2_n_entropy(n in 1usize..500, scale in 0.001f64..1000.0) {
        let h = entropy(&vec![scale; n]).unwrap();
        prop_assert!((h - (n as f64).log2()).abs() < 1e-9);
    }

    #[test]
    fn entropy_is_scale_invariant_and_bounded(w in weights(), scale in 0.01f64..100.0) {
        let h = entropy(&w).unwrap();
        let scaled: Vec<f64> = w.iter().map(|x| x * scale).collect();
        prop_assert!((h - entropy(&scaled).unwrap()).abs() < 1e-9);
        prop_assert!(h >= 0.0 && h <= (w.len() as f64).log2() + 1e-9);
    }

    #[test]
    fn full_topk_is_plain_entropy(w in weights()) {
        prop_assert_eq!(topk_entropy(&w, 100.0).unwrap(), entropy(&w).unwrap());
    }

    #[test]
    fn identical_tags_score_100(tags in prop::collection::vec(tag_seq(), 1..6)) {
        let s = slot_span_f1(&tags, &tags).unwrap();
        prop_assert_eq!((s.precision, s.recall, s.f1), (100.0, 100.0, 100.0));
    }

    #[test]
    fn swapping_sides_swaps_precision_and_recall(a in tag_seq(), b in tag_seq()) {
        let n = a.len().min(b.len());
        let (p, g) = (vec![a[..n].to_vec()], vec![b[..n].to_vec()]);
        let forward = slot_span_f1(&p, &g).unwrap();
        let back = slot_span_f1(&g, &p).unwrap();
        prop_assert_eq!(forward.precision, back.recall);
        prop_assert_eq!(forward.recall, back.precision);
        prop_assert_eq!(forward.f1, back.f1);
    }
}
