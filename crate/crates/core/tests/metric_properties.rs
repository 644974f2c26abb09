mod common;

use std::collections::HashSet;

use common::*;
use counterfair::graph::{predict_scores, EmbeddingTable};
use counterfair::metrics::*;
use proptest::prelude::*;

fn set(items: &[usize]) -> HashSet<usize> {
    items.iter().copied().collect()
}

#[test]
fn hand_computed_cases() {
    // one hit at rank 2 of a single relevant item
    assert!((ndcg_at_k(&[5, 3, 9], &set(&[3]), 3) - 1.0 / 3f64.log2()).abs() < 1e-12);
    assert!((ndcg_at_k(&[5, 3, 9], &set(&[3]), 3) - 0.6309).abs() < 1e-4);
    // one hit of five at k = 5 with two relevant: p = 0.2, r = 0.5
    let f1 = f1_at_k(&[1, 2, 3, 4, 5], &set(&[1, 7]), 5);
    assert!((f1 - 2.0 * 0.2 * 0.5 / 0.7).abs() < 1e-12);
    // p = 1/10, r = 1/3
    let f1 = f1_at_k(&(0..10).collect::<Vec<_>>(), &set(&[0, 20, 21]), 10);
    assert!((f1 - 2.0 / 13.0).abs() < 1e-12);
    // p = 1/5, r = 1/7 -> 1/6
    let f1 = f1_at_k(&[0, 1, 2, 3, 4], &set(&[4, 10, 11, 12, 13, 14, 15]), 5);
    assert!((f1 - 1.0 / 6.0).abs() < 1e-6);
    assert_eq!(ndcg_at_k(&[1, 2], &HashSet::new(), 2), 0.0);
    assert_eq!(f1_at_k(&[1, 2], &set(&[9]), 2), 0.0);
}

#[test]
fn ties_break_by_index() {
    let t = topk(&[0.5, 0.9, 0.5, 0.9, 0.1], 3, &[]);
    assert_eq!(t.items, vec![1, 3, 0]);
    let t = topk(&[0.5, 0.9, 0.5], 5, &[1]);
    assert_eq!(t.items, vec![0, 2]);
    assert!(t.short);
}

#[test]
fn global_pgain_is_sum_of_user_pgains() {
    let prior = GainVector {
        values: vec![0.1, 0.5, 0.0, 0.3],
        flagged: vec![],
    };
    let post = GainVector {
        values: vec![0.2, 0.4, 0.0, 0.6],
        flagged: vec![],
    };
    let sum: f64 = (0..4).map(|u| pgain(&post, &prior, u).unwrap()).sum();
    assert!((pgain_global(&post, &prior).unwrap() - sum).abs() < 1e-12);
    assert!(pgain(&post, &prior, 4).is_err());
}

fn naive_gain(
    emb: &EmbeddingTable,
    ctx: &RankingContext,
    u: usize,
    k: usize,
    metric: Metric,
) -> f64 {
    let scores = predict_scores(emb, u);
    let excluded: Vec<usize> = ctx.excluded(u).iter().map(|&i| i as usize).collect();
    let mut order: Vec<usize> = (0..scores.len())
        .filter(|i| !excluded.contains(i))
        .collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order.truncate(k);
    let rel: HashSet<usize> = ctx.relevant(u).iter().map(|&i| i as usize).collect();
    score_ranking(metric, &order, &rel, k)
}

#[test]
fn gain_vector_matches_naive_loop() {
    for seed in 0..5 {
        let train = random_matrix(6, 12, 0.25, seed);
        let test = random_matrix(6, 12, 0.2, seed + 100);
        let test_edges: Vec<(usize, usize)> = test
            .edges()
            .filter(|&(u, i)| !train.contains(u, i))
            .collect();
        let test = counterfair::dataset::InteractionMatrix::from_edges(6, 12, test_edges).unwrap();
        let emb = EmbeddingTable::from_vec(6, 12, 3, flatten(&random_rows(18, 3, seed))).unwrap();
        for ctx in [
            RankingContext::training(&train),
            RankingContext::held_out(&train, &test).unwrap(),
        ] {
            for metric in [Metric::Ndcg, Metric::F1] {
                let gv = gain_vector_from_embeddings(&emb, &ctx, 4, metric).unwrap();
                for u in 0..6 {
                    assert!((gv.values[u] - naive_gain(&emb, &ctx, u, 4, metric)).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn cohort_mean_agrees_with_subset() {
    let gv = GainVector {
        values: vec![0.1, 0.2, 0.3, 0.4],
        flagged: vec![],
    };
    assert!((gv.mean_over(&[1, 3]) - 0.3).abs() < 1e-12);
    assert_eq!(gv.mean_over(&[]), 0.0);
}

#[test]
fn contexts_reject_overlap() {
    assert!(RankingContext::new(3, vec![vec![1]], vec![vec![1]]).is_err());
}

proptest! {
    #[test]
    fn ideal_ranking_scores_one(n_rel in 1usize..15, k in 1usize..15) {
        let ranked: Vec<usize> = (0..30).collect();
        let rel: HashSet<usize> = (0..n_rel).collect();
        prop_assert!((ndcg_at_k(&ranked, &rel, k) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_bounded(ranked in proptest::sample::subsequence((0..40usize).collect::<Vec<_>>(), 0..20),
                           rel in proptest::collection::hash_set(0usize..40, 0..10), k in 1usize..20) {
        let n = ndcg_at_k(&ranked, &rel, k);
        let f = f1_at_k(&ranked, &rel, k);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn strictly_monotone_rescaling_keeps_rankings(scores in proptest::collection::vec(-5.0f64..5.0, 1..30),
                                                   a in 0.1f64..10.0, b in -3.0f64..3.0, k in 1usize..10) {
        let mapped: Vec<f64> = scores.iter().map(|s| (a * s + b).exp()).collect();
        prop_assert_eq!(topk(&scores, k, &[]).items, topk(&mapped, k, &[]).items);
    }

    #[test]
    fn topk_never_returns_excluded(scores in proptest::collection::vec(-1.0f64..1.0, 1..30),
                                   excl in proptest::collection::vec(0usize..30, 0..10), k in 1usize..10) {
        let t = topk(&scores, k, &excl);
        prop_assert!(t.items.iter().all(|i| !excl.contains(i)));
        let avail = (0..scores.len()).filter(|i| !excl.contains(i)).count();
        prop_assert_eq!(t.items.len(), k.min(avail));
        prop_assert_eq!(t.short, avail < k);
    }
}
