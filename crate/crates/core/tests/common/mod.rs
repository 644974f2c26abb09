#![allow(dead_code)]

use counterfair::dataset::InteractionMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random bipartite matrix in which every user and item has at least one
/// interaction.
pub fn random_matrix(n_users: usize, n_items: usize, density: f64, seed: u64) -> InteractionMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n_users {
        for i in 0..n_items {
            if rng.random::<f64>() < density {
                edges.push((u, i));
            }
        }
    }
    for u in 0..n_users {
        edges.push((u, rng.random_range(0..n_items)));
    }
    for i in 0..n_items {
        edges.push((rng.random_range(0..n_users), i));
    }
    InteractionMatrix::from_edges(n_users, n_items, edges).unwrap()
}

pub type Dense = Vec<Vec<f64>>;

/// `D^{-1/2} A D^{-1/2}` built entry by entry from the interaction matrix.
pub fn dense_normalized(r: &InteractionMatrix) -> Dense {
    let (nu, ni) = (r.n_users(), r.n_items());
    let n = nu + ni;
    let mut a = vec![vec![0.0; n]; n];
    #[allow(clippy::needless_range_loop)]
    for u in 0..nu {
        for i in (0..ni).filter(|&i| r.contains(u, i)) {
            let du = (0..ni).filter(|&j| r.contains(u, j)).count() as f64;
            let di = (0..nu).filter(|&v| r.contains(v, i)).count() as f64;
            let w = 1.0 / (du.sqrt() * di.sqrt());
            a[u][nu + i] = w;
            a[nu + i][u] = w;
        }
    }
    a
}

pub fn dense_mul(a: &Dense, x: &Dense) -> Dense {
    let cols = x[0].len();
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|c| row.iter().zip(x).map(|(w, xr)| w * xr[c]).sum())
                .collect()
        })
        .collect()
}

pub fn random_rows(n: usize, d: usize, seed: u64) -> Dense {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn flatten(x: &Dense) -> Vec<f64> {
    x.iter().flatten().copied().collect()
}

pub fn ml100k_path() -> std::path::PathBuf {
    let p = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k/u.data");
    assert!(
        p.exists(),
        "ML-100K ratings not found at {}; run scripts/fetch_ml100k.py first",
        p.display()
    );
    p
}
