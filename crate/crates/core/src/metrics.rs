//! Top-k ranking metrics and per-user gain vectors.

use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionMatrix;
use crate::error::{Error, Result};
use crate::graph::{predict_scores, EmbeddingTable};
use crate::trainer::ModelState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ndcg,
    F1,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Ndcg => "ndcg",
            Metric::F1 => "f1",
        })
    }
}

/// Result of a top-k selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopK {
    pub items: Vec<usize>,
    /// Fewer than `k` items were rankable.
    pub short: bool,
}

/// The `k` highest-scoring items not in `excluded`, best first. Equal
/// scores are ordered by ascending item index.
pub fn topk(scores: &[f64], k: usize, excluded: &[usize]) -> TopK {
    let mut mask = vec![false; scores.len()];
    for &e in excluded {
        if e < mask.len() {
            mask[e] = true;
        }
    }
    topk_masked(scores, k, &mask)
}

fn topk_masked(scores: &[f64], k: usize, excluded: &[bool]) -> TopK {
    let mut cand: Vec<usize> = (0..scores.len()).filter(|&i| !excluded[i]).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    let short = cand.len() < k;
    if !short && k > 0 && k < cand.len() {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    cand.truncate(k);
    TopK { items: cand, short }
}

/// Binary-relevance NDCG over the first `k` ranked items.
pub fn ndcg_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    if relevant.is_empty() || k == 0 {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(pos, _)| 1.0 / (pos as f64 + 2.0).log2())
        .sum();
    let idcg: f64 = (0..k.min(relevant.len()))
        .map(|pos| 1.0 / (pos as f64 + 2.0).log2())
        .sum();
    dcg / idcg
}

/// Harmonic mean of precision (`hits / k`) and recall (`hits / |relevant|`).
pub fn f1_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    if relevant.is_empty() || k == 0 {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|i| relevant.contains(i))
        .count() as f64;
    let p = hits / k as f64;
    let r = hits / relevant.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn score_ranking(metric: Metric, ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    match metric {
        Metric::Ndcg => ndcg_at_k(ranked, relevant, k),
        Metric::F1 => f1_at_k(ranked, relevant, k),
    }
}

/// Which items each user is ranked over and judged against.
/// Candidates are all items minus the user's exclusions.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingContext {
    n_items: usize,
    relevant: Vec<Vec<u32>>,
    excluded: Vec<Vec<u32>>,
}

impl RankingContext {
    pub fn new(n_items: usize, relevant: Vec<Vec<u32>>, excluded: Vec<Vec<u32>>) -> Result<Self> {
        if relevant.len() != excluded.len() {
            return Err(Error::ShapeMismatch(
                "relevant and excluded cover different users".into(),
            ));
        }
        for (rel, exc) in relevant.iter().zip(&excluded) {
            if rel.iter().chain(exc).any(|&i| i as usize >= n_items) {
                return Err(Error::ShapeMismatch("item index beyond catalogue".into()));
            }
            let exc: HashSet<u32> = exc.iter().copied().collect();
            if rel.iter().any(|i| exc.contains(i)) {
                return Err(Error::InvalidArgument(
                    "relevant item is excluded from ranking".into(),
                ));
            }
        }
        Ok(Self {
            n_items,
            relevant,
            excluded,
        })
    }

    /// Training-data context: rank every item, relevance = `r`.
    pub fn training(r: &InteractionMatrix) -> Self {
        Self {
            n_items: r.n_items(),
            relevant: (0..r.n_users()).map(|u| r.user_items(u).to_vec()).collect(),
            excluded: vec![Vec::new(); r.n_users()],
        }
    }

    /// Held-out context: items in `exclude` (training interactions plus any
    /// imputed ones) are removed from ranking; relevance is the test
    /// interactions that remain rankable.
    pub fn held_out(exclude: &InteractionMatrix, test: &InteractionMatrix) -> Result<Self> {
        if exclude.n_users() != test.n_users() || exclude.n_items() != test.n_items() {
            return Err(Error::ShapeMismatch(
                "train and test matrices differ in shape".into(),
            ));
        }
        let relevant = (0..test.n_users())
            .map(|u| {
                test.user_items(u)
                    .iter()
                    .copied()
                    .filter(|&i| !exclude.contains(u, i as usize))
                    .collect()
            })
            .collect();
        let excluded = (0..exclude.n_users())
            .map(|u| exclude.user_items(u).to_vec())
            .collect();
        Ok(Self {
            n_items: test.n_items(),
            relevant,
            excluded,
        })
    }

    pub fn n_users(&self) -> usize {
        self.relevant.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn relevant(&self, u: usize) -> &[u32] {
        &self.relevant[u]
    }

    pub fn excluded(&self, u: usize) -> &[u32] {
        &self.excluded[u]
    }

    pub fn candidate_count(&self, u: usize) -> usize {
        self.n_items - self.excluded[u].len()
    }
}

/// Per-user metric values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainVector {
    pub values: Vec<f64>,
    /// Users with no rankable item (value forced to 0).
    pub flagged: Vec<usize>,
}

impl GainVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, u: usize) -> Option<f64> {
        self.values.get(u).copied()
    }

    /// Mean over `users`, 0 for an empty cohort.
    pub fn mean_over(&self, users: &[usize]) -> f64 {
        if users.is_empty() {
            return 0.0;
        }
        users.iter().map(|&u| self.values[u]).sum::<f64>() / users.len() as f64
    }
}

/// Metric value of user `u` under `ctx`, and whether the user had no
/// candidates at all.
pub fn user_gain(
    emb: &EmbeddingTable,
    ctx: &RankingContext,
    u: usize,
    k: usize,
    metric: Metric,
) -> (f64, bool) {
    if ctx.candidate_count(u) == 0 {
        return (0.0, true);
    }
    let scores = predict_scores(emb, u);
    let mut mask = vec![false; scores.len()];
    for &e in ctx.excluded(u) {
        mask[e as usize] = true;
    }
    let ranked = topk_masked(&scores, k, &mask);
    let relevant: HashSet<usize> = ctx.relevant(u).iter().map(|&i| i as usize).collect();
    (score_ranking(metric, &ranked.items, &relevant, k), false)
}

/// [`gain_vector`] over explicit aggregated embeddings.
pub fn gain_vector_from_embeddings(
    emb: &EmbeddingTable,
    ctx: &RankingContext,
    k: usize,
    metric: Metric,
) -> Result<GainVector> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if emb.n_users() != ctx.n_users() || emb.n_items() != ctx.n_items() {
        return Err(Error::ShapeMismatch(
            "embeddings and ranking context differ in shape".into(),
        ));
    }
    let per_user: Vec<(f64, bool)> = (0..ctx.n_users())
        .into_par_iter()
        .map(|u| user_gain(emb, ctx, u, k, metric))
        .collect();
    let flagged = per_user
        .iter()
        .enumerate()
        .filter(|(_, (_, f))| *f)
        .map(|(u, _)| u)
        .collect();
    Ok(GainVector {
        values: per_user.into_iter().map(|(v, _)| v).collect(),
        flagged,
    })
}

/// Ranks every user's candidates with the model and scores the top `k`.
pub fn gain_vector(
    model: &ModelState,
    ctx: &RankingContext,
    k: usize,
    metric: Metric,
) -> Result<GainVector> {
    let emb = model
        .aggregated()
        .ok_or_else(|| Error::InvalidArgument("model aggregation is stale".into()))?;
    gain_vector_from_embeddings(emb, ctx, k, metric)
}

/// `G_post[u] − G_prior[u]`.
pub fn pgain(post: &GainVector, prior: &GainVector, u: usize) -> Result<f64> {
    if post.len() != prior.len() {
        return Err(Error::ShapeMismatch("gain vectors differ in length".into()));
    }
    match (post.get(u), prior.get(u)) {
        (Some(a), Some(b)) => Ok(a - b),
        _ => Err(Error::OutOfRange {
            index: u,
            len: post.len(),
        }),
    }
}

/// `Σ_u (G_post[u] − G_prior[u])` over all users.
pub fn pgain_global(post: &GainVector, prior: &GainVector) -> Result<f64> {
    if post.len() != prior.len() {
        return Err(Error::ShapeMismatch("gain vectors differ in length".into()));
    }
    Ok(post
        .values
        .iter()
        .zip(&prior.values)
        .map(|(a, b)| a - b)
        .sum())
}

/// One `(scope, metric, k, value)` line of a metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scope: String,
    pub metric: Metric,
    pub k: usize,
    pub value: f64,
}

pub fn metric_rows_tsv(rows: &[MetricRow]) -> String {
    let mut out = String::from("scope\tmetric\tk\tvalue\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\n",
            r.scope, r.metric, r.k, r.value
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[usize]) -> HashSet<usize> {
        items.iter().copied().collect()
    }

    #[test]
    fn topk_examples() {
        let s = [0.1, 0.9, 0.5];
        assert_eq!(topk(&s, 2, &[]).items, vec![1, 2]);
        assert_eq!(topk(&[0.3; 4], 2, &[]).items, vec![0, 1]);
        assert_eq!(topk(&s, 2, &[1]).items, vec![2, 0]);
        let short = topk(&s, 5, &[0]);
        assert_eq!(
            short,
            TopK {
                items: vec![1, 2],
                short: true
            }
        );
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[3, 1, 2], &set(&[3]), 3), 1.0);
        let v = ndcg_at_k(&[1, 3, 2], &set(&[3]), 3);
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((v - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_k(&[1, 2], &set(&[7]), 2), 0.0);
        assert_eq!(ndcg_at_k(&[1, 2], &set(&[]), 2), 0.0);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_at_k(&[1, 2], &set(&[1, 2]), 2), 1.0);
        let ranked: Vec<usize> = (0..10).collect();
        let v = f1_at_k(&ranked, &set(&[3, 42]), 10);
        assert!((v - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(f1_at_k(&ranked, &set(&[42]), 10), 0.0);
    }

    #[test]
    fn pgain_examples() {
        let g = |v: Vec<f64>| GainVector {
            values: v,
            flagged: vec![],
        };
        let a = g(vec![0.1, 0.2]);
        assert_eq!(pgain(&a, &a, 1).unwrap(), 0.0);
        assert!((pgain(&g(vec![0.2163]), &g(vec![0.1629]), 0).unwrap() - 0.0534).abs() < 1e-12);
        assert!(pgain(&g(vec![0.1]), &g(vec![0.3]), 0).unwrap() < 0.0);
        assert!(matches!(pgain(&a, &a, 5), Err(Error::OutOfRange { .. })));
        let prior = g(vec![0.3; 100]);
        let post = g(vec![0.31; 100]);
        assert!((pgain_global(&post, &prior).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn held_out_context_drops_excluded_relevance() {
        let train = InteractionMatrix::from_edges(1, 4, [(0, 0), (0, 1)]).unwrap();
        let test = InteractionMatrix::from_edges(1, 4, [(0, 2), (0, 3)]).unwrap();
        let imputed = train.with_user_items(0, &[3]).unwrap();
        let ctx = RankingContext::held_out(&imputed, &test).unwrap();
        assert_eq!(ctx.relevant(0), &[2]);
        assert_eq!(ctx.candidate_count(0), 1);
    }

    #[test]
    fn context_rejects_relevant_excluded_overlap() {
        assert!(RankingContext::new(3, vec![vec![1]], vec![vec![1]]).is_err());
    }

    #[test]
    fn empty_candidates_flagged() {
        let r = InteractionMatrix::from_edges(1, 2, [(0, 0), (0, 1)]).unwrap();
        let ctx = RankingContext::held_out(&r, &InteractionMatrix::empty(1, 2)).unwrap();
        let emb = EmbeddingTable::zeros(1, 2, 2);
        let g = gain_vector_from_embeddings(&emb, &ctx, 2, Metric::Ndcg).unwrap();
        assert_eq!(g.values, vec![0.0]);
        assert_eq!(g.flagged, vec![0]);
    }
}
