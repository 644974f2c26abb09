mod common;

use common::*;
use counterfair::dataset::{
    kcore_filter, load_movielens, temporal_split, InteractionMatrix, MovieLensFormat,
};
use counterfair::graph::{build_adjacency, predict_scores};
use counterfair::trainer::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 30,
        batch_size: 16,
        learning_rate: 0.05,
        lambda_reg: 1e-3,
        layers: 2,
        dim: 8,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_gives_identical_models() {
    let r = random_matrix(12, 15, 0.2, 3);
    let a = train(&r, &small_config(7), None).unwrap();
    let b = train(&r, &small_config(7), None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.e0.as_slice(), b.e0.as_slice());
    let c = train(&r, &small_config(8), None).unwrap();
    assert_ne!(a.e0.as_slice(), c.e0.as_slice());
}

#[test]
fn stronger_regularization_shrinks_embeddings() {
    let r = random_matrix(12, 15, 0.2, 4);
    for seed in 0..3 {
        let norms: Vec<f64> = [0.0, 1e-4, 1e-2]
            .iter()
            .map(|&lambda| {
                let cfg = TrainConfig {
                    lambda_reg: lambda,
                    ..small_config(seed)
                };
                train(&r, &cfg, None).unwrap().e0.squared_norm()
            })
            .collect();
        assert!(
            norms[0] >= norms[1] && norms[1] >= norms[2],
            "seed {seed}: {norms:?}"
        );
    }
}

#[test]
fn toy_positives_outrank_negatives() {
    // block structure: users 0-1 like items 0-2, users 2-4 like items 3-4
    let edges = vec![
        (0, 0),
        (0, 1),
        (1, 1),
        (1, 2),
        (2, 3),
        (3, 3),
        (3, 4),
        (4, 4),
        (0, 2),
        (2, 4),
    ];
    let r = InteractionMatrix::from_edges(5, 5, edges).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 10,
        learning_rate: 0.1,
        lambda_reg: 1e-4,
        layers: 1,
        dim: 4,
        seed: 0,
        ..TrainConfig::default()
    };
    let state = train(&r, &cfg, None).unwrap();
    let emb = state.aggregated().unwrap();
    for (u, i) in r.edges() {
        let s = predict_scores(emb, u);
        for j in 0..5 {
            if !r.contains(u, j) {
                assert!(s[i] > s[j], "user {u}: pos {i} vs neg {j}");
            }
        }
    }
}

#[test]
fn loss_decreases_on_average() {
    let r = random_matrix(20, 25, 0.15, 9);
    let adj = build_adjacency(&r).unwrap();
    let (_, trace) = train_with_adjacency(&r, &adj, &small_config(1), None).unwrap();
    let head: f64 = trace[..5].iter().sum::<f64>() / 5.0;
    let tail: f64 = trace[trace.len() - 5..].iter().sum::<f64>() / 5.0;
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn zero_epochs_keeps_warm_start() {
    let r = random_matrix(6, 6, 0.3, 2);
    let base = train(&r, &small_config(0), None).unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        ..small_config(5)
    };
    let copy = train(&r, &cfg, Some(&base)).unwrap();
    assert_eq!(copy.e0, base.e0);
    assert_eq!(copy.aggregated(), base.aggregated());
}

#[test]
fn checkpoint_round_trip_on_disk() {
    let r = random_matrix(6, 7, 0.3, 2);
    let state = train(&r, &small_config(0), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint_tagged(&state, &path, "abc").unwrap();
    let (mut back, tag) = load_checkpoint_tagged(&path, 6, 7).unwrap();
    assert_eq!(tag, "abc");
    back.refresh(&build_adjacency(&r).unwrap()).unwrap();
    assert_eq!(back, state);
    assert!(load_checkpoint(&path, 7, 6).is_err());
    std::fs::write(&path, b"garbage").unwrap();
    assert!(load_checkpoint(&path, 6, 7).is_err());
}

#[test]
fn users_are_sampled_in_proportion_to_degree() {
    let log = load_movielens(ml100k_path(), MovieLensFormat::Tab).unwrap();
    let data = temporal_split(&kcore_filter(&log, 10).unwrap(), 0.8).unwrap();
    let r = &data.train;
    let edges: Vec<(u32, u32)> = r.edges().map(|(u, i)| (u as u32, i as u32)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws = 400_000;
    let triplets = sample_triplets(r, &edges, draws, 1, &mut rng);
    assert_eq!(triplets.len(), draws);
    assert!(triplets
        .iter()
        .all(|t| r.contains(t.user, t.pos) && !r.contains(t.user, t.neg)));

    // aggregate users into degree deciles and compare observed with expected shares
    let mut users: Vec<usize> = (0..r.n_users()).collect();
    users.sort_by_key(|&u| r.user_degree(u));
    let mut counts = vec![0usize; r.n_users()];
    for t in &triplets {
        counts[t.user] += 1;
    }
    for chunk in users.chunks(users.len().div_ceil(10)) {
        let expected: f64 =
            chunk.iter().map(|&u| r.user_degree(u) as f64).sum::<f64>() / r.n_edges() as f64;
        let observed: f64 = chunk.iter().map(|&u| counts[u] as f64).sum::<f64>() / draws as f64;
        assert!(
            (observed - expected).abs() / expected < 0.05,
            "expected {expected}, observed {observed}"
        );
    }
}
