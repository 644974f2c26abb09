mod common;

use common::random_matrix;
use counterfair::graph::{build_adjacency, EmbeddingTable};
use counterfair::trainer::{bpr_gradient, bpr_loss, init_embeddings, Triplet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest coordinate-wise relative error between the analytic gradient
/// and central differences with step 1e-4.
fn max_fd_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nu = rng.random_range(2..=4);
    let ni = rng.random_range(3..=10 - nu);
    let dim = rng.random_range(1..=4);
    let layers = rng.random_range(0..=2);
    let lambda = [0.0, 1e-3, 0.1][rng.random_range(0..3)];
    let r = random_matrix(nu, ni, 0.3, seed);
    let adj = build_adjacency(&r).unwrap();
    let mut triplets = Vec::new();
    for _ in 0..6 {
        let u = rng.random_range(0..nu);
        let pos = r.user_items(u)[rng.random_range(0..r.user_degree(u))] as usize;
        let neg = rng.random_range(0..ni);
        triplets.push(Triplet { user: u, pos, neg });
    }
    let e0 = init_embeddings(nu, ni, dim, seed).unwrap();
    let scaled: Vec<f64> = e0.as_slice().iter().map(|v| v * 5.0).collect();
    let e0 = EmbeddingTable::from_vec(nu, ni, dim, scaled).unwrap();
    let (_, grad) = bpr_gradient(&e0, &adj, layers, &triplets, lambda).unwrap();

    let eps = 1e-4;
    let mut worst: f64 = 0.0;
    for idx in 0..e0.as_slice().len() {
        let mut plus = e0.clone();
        plus.as_mut_slice()[idx] += eps;
        let mut minus = e0.clone();
        minus.as_mut_slice()[idx] -= eps;
        let fd = (bpr_loss(&plus, &adj, layers, &triplets, lambda).unwrap()
            - bpr_loss(&minus, &adj, layers, &triplets, lambda).unwrap())
            / (2.0 * eps);
        let g = grad.as_slice()[idx];
        let err = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn analytic_gradient_matches_central_differences() {
    for seed in 0..20 {
        let err = max_fd_error(seed);
        assert!(err < 1e-3, "instance {seed}: relative error {err}");
    }
}
