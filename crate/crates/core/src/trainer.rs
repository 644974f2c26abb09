//! BPR training of layer-0 embeddings through linear graph propagation.
//!
//! Because propagation and layer aggregation are linear, the aggregated
//! embeddings are `M · E0` with `M = Σ_k α_k Â^k`, and the gradient of any
//! loss w.r.t. `E0` is `Mᵀ` (= `M`, `Â` being symmetric) applied to the
//! gradient w.r.t. the aggregated embeddings.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionMatrix;
use crate::error::{Error, IoContext, Result};
use crate::graph::{self, build_adjacency, EmbeddingTable, NormalizedAdjacency};

pub const INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_reg: f64,
    pub layers: usize,
    pub dim: usize,
    pub seed: u64,
    pub negatives_per_positive: usize,
    pub optimizer: Optimizer,
    /// Reuse one forward propagation for every batch of an epoch. Gradients
    /// become approximate after the first batch.
    pub propagate_once_per_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 2048,
            learning_rate: 0.05,
            lambda_reg: 0.03,
            layers: graph::DEFAULT_LAYERS,
            dim: graph::DEFAULT_EMBEDDING_DIM,
            seed: 0,
            negatives_per_positive: 1,
            optimizer: Optimizer::Sgd,
            propagate_once_per_epoch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return bad("lambda_reg must be non-negative");
        }
        if self.negatives_per_positive == 0 {
            return bad("negatives_per_positive must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        Ok(())
    }
}

/// `(user, positive item, negative item)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Debug, Clone, Default)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

#[derive(Debug, Clone)]
pub struct ModelState {
    pub e0: EmbeddingTable,
    aggregated: Option<EmbeddingTable>,
    rng: ChaCha8Rng,
    pub config: TrainConfig,
    pub epochs_done: usize,
    adam: Option<AdamState>,
}

impl PartialEq for ModelState {
    fn eq(&self, other: &Self) -> bool {
        self.e0 == other.e0
            && self.aggregated == other.aggregated
            && self.config == other.config
            && self.epochs_done == other.epochs_done
    }
}

impl ModelState {
    pub fn new(e0: EmbeddingTable, config: TrainConfig) -> Self {
        Self {
            e0,
            aggregated: None,
            rng: sampler_rng(config.seed),
            config,
            epochs_done: 0,
            adam: None,
        }
    }

    /// Aggregated embeddings, if they reflect the current `e0`.
    pub fn aggregated(&self) -> Option<&EmbeddingTable> {
        self.aggregated.as_ref()
    }

    pub fn is_fresh(&self) -> bool {
        self.aggregated.is_some()
    }

    /// Recomputes the aggregated embeddings from `e0` over `adj`.
    pub fn refresh(&mut self, adj: &NormalizedAdjacency) -> Result<&EmbeddingTable> {
        let agg = graph::smooth(&self.e0, adj, self.config.layers)?;
        Ok(self.aggregated.insert(agg))
    }

    pub fn n_users(&self) -> usize {
        self.e0.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.e0.n_items()
    }

    fn invalidate(&mut self) {
        self.aggregated = None;
    }
}

fn sampler_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5a3b_1e00_0001)
}

/// I.i.d. `N(0, 0.1²)` layer-0 embeddings.
pub fn init_embeddings(
    n_users: usize,
    n_items: usize,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    if n_users + n_items == 0 {
        return Err(Error::InvalidArgument("no nodes to embed".into()));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "embedding dimension must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let data = (0..(n_users + n_items) * dim)
        .map(|_| normal.sample(&mut rng))
        .collect();
    EmbeddingTable::from_vec(n_users, n_items, dim, data)
}

/// Draws `batch` observed edges uniformly (so users appear in proportion
/// to their degree) and pairs each with `negatives` uniformly drawn
/// non-interacted items. Draws landing on a user who has interacted with
/// every item are dropped.
pub fn sample_triplets<R: Rng + ?Sized>(
    r: &InteractionMatrix,
    edges: &[(u32, u32)],
    batch: usize,
    negatives: usize,
    rng: &mut R,
) -> Vec<Triplet> {
    let mut out = Vec::with_capacity(batch * negatives);
    if edges.is_empty() {
        return out;
    }
    let n_items = r.n_items();
    let mut saturated = 0usize;
    for _ in 0..batch {
        let (u, pos) = edges[rng.random_range(0..edges.len())];
        let (u, pos) = (u as usize, pos as usize);
        if r.user_degree(u) >= n_items {
            saturated += 1;
            continue;
        }
        for _ in 0..negatives {
            let neg = loop {
                let j = rng.random_range(0..n_items);
                if !r.contains(u, j) {
                    break j;
                }
            };
            out.push(Triplet { user: u, pos, neg });
        }
    }
    if saturated > 0 {
        log::warn!("skipped {saturated} draw(s) for users with no unobserved item");
    }
    out
}

/// `−ln σ(x)`, evaluated without overflow.
#[inline]
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Batch objective `−Σ ln σ(p_ui − p_uj) + λ‖E0‖²` given aggregated embeddings.
pub fn bpr_objective(
    e0: &EmbeddingTable,
    aggregated: &EmbeddingTable,
    triplets: &[Triplet],
    lambda: f64,
) -> f64 {
    let data: f64 = triplets
        .iter()
        .map(|t| {
            let eu = aggregated.user(t.user);
            neg_log_sigmoid(
                graph::dot(eu, aggregated.item(t.pos)) - graph::dot(eu, aggregated.item(t.neg)),
            )
        })
        .sum();
    data + lambda * e0.squared_norm()
}

/// Objective value at `e0`, propagating from scratch.
pub fn bpr_loss(
    e0: &EmbeddingTable,
    adj: &NormalizedAdjacency,
    layers: usize,
    triplets: &[Triplet],
    lambda: f64,
) -> Result<f64> {
    let agg = graph::smooth(e0, adj, layers)?;
    Ok(bpr_objective(e0, &agg, triplets, lambda))
}

/// Objective and its exact gradient w.r.t. `e0`, given `aggregated = M·e0`.
fn objective_and_gradient(
    e0: &EmbeddingTable,
    aggregated: &EmbeddingTable,
    adj: &NormalizedAdjacency,
    layers: usize,
    triplets: &[Triplet],
    lambda: f64,
) -> Result<(f64, EmbeddingTable)> {
    let nu = e0.n_users();
    let dim = e0.dim();
    let mut g_agg = EmbeddingTable::zeros(nu, e0.n_items(), dim);
    let mut data_loss = 0.0;
    for t in triplets {
        let eu = aggregated.user(t.user);
        let ei = aggregated.item(t.pos);
        let ej = aggregated.item(t.neg);
        let x = graph::dot(eu, ei) - graph::dot(eu, ej);
        data_loss += neg_log_sigmoid(x);
        // d/dx −ln σ(x) = −σ(−x)
        let c = -sigmoid(-x);
        let g = g_agg.as_mut_slice();
        for k in 0..dim {
            g[t.user * dim + k] += c * (ei[k] - ej[k]);
            g[(nu + t.pos) * dim + k] += c * eu[k];
            g[(nu + t.neg) * dim + k] -= c * eu[k];
        }
    }
    let mut grad = graph::smooth(&g_agg, adj, layers)?;
    for (g, w) in grad.as_mut_slice().iter_mut().zip(e0.as_slice()) {
        *g += 2.0 * lambda * w;
    }
    Ok((data_loss + lambda * e0.squared_norm(), grad))
}

/// Exact gradient of [`bpr_loss`] w.r.t. `e0`.
pub fn bpr_gradient(
    e0: &EmbeddingTable,
    adj: &NormalizedAdjacency,
    layers: usize,
    triplets: &[Triplet],
    lambda: f64,
) -> Result<(f64, EmbeddingTable)> {
    let agg = graph::smooth(e0, adj, layers)?;
    objective_and_gradient(e0, &agg, adj, layers, triplets, lambda)
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn apply_update(state: &mut ModelState, grad: &EmbeddingTable) {
    let lr = state.config.learning_rate;
    match state.config.optimizer {
        Optimizer::Sgd => {
            for (w, g) in state.e0.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                *w -= lr * g;
            }
        }
        Optimizer::Adam => {
            let n = grad.as_slice().len();
            let adam = state.adam.get_or_insert_with(|| AdamState {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            });
            adam.t += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(adam.t as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(adam.t as i32);
            for (((w, g), m), v) in state
                .e0
                .as_mut_slice()
                .iter_mut()
                .zip(grad.as_slice())
                .zip(adam.m.iter_mut())
                .zip(adam.v.iter_mut())
            {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// One optimizer step on a batch. Returns the batch objective evaluated
/// before the update.
pub fn bpr_gradient_step(
    state: &mut ModelState,
    adj: &NormalizedAdjacency,
    triplets: &[Triplet],
) -> Result<f64> {
    let agg = graph::smooth(&state.e0, adj, state.config.layers)?;
    step_with_forward(state, &agg, adj, triplets)
}

fn step_with_forward(
    state: &mut ModelState,
    agg: &EmbeddingTable,
    adj: &NormalizedAdjacency,
    triplets: &[Triplet],
) -> Result<f64> {
    let (loss, grad) = objective_and_gradient(
        &state.e0,
        agg,
        adj,
        state.config.layers,
        triplets,
        state.config.lambda_reg,
    )?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "BPR loss {loss} after {} epoch(s) on a batch of {}",
            state.epochs_done,
            triplets.len()
        )));
    }
    apply_update(state, &grad);
    state.invalidate();
    Ok(loss)
}

/// Per-epoch mean batch loss.
pub type LossTrace = Vec<f64>;

/// Trains on `r` (building its adjacency).
pub fn train(
    r: &InteractionMatrix,
    config: &TrainConfig,
    warm_start: Option<&ModelState>,
) -> Result<ModelState> {
    let adj = build_adjacency(r)?;
    train_with_adjacency(r, &adj, config, warm_start).map(|(s, _)| s)
}

/// Trains on `r` whose normalized adjacency is `adj`.
///
/// Without a warm start, `e0` is initialized from `config.seed`. With one,
/// its `e0` is copied. Sampling is always seeded from `config.seed`.
pub fn train_with_adjacency(
    r: &InteractionMatrix,
    adj: &NormalizedAdjacency,
    config: &TrainConfig,
    warm_start: Option<&ModelState>,
) -> Result<(ModelState, LossTrace)> {
    config.validate()?;
    if adj.n_users() != r.n_users() || adj.n_items() != r.n_items() {
        return Err(Error::ShapeMismatch(
            "adjacency and interaction matrix disagree".into(),
        ));
    }
    let mut state = match warm_start {
        Some(w) => {
            if w.n_users() != r.n_users() || w.n_items() != r.n_items() {
                return Err(Error::ShapeMismatch(
                    "warm start covers a different node set".into(),
                ));
            }
            let mut s = ModelState::new(w.e0.clone(), config.clone());
            s.epochs_done = w.epochs_done;
            s
        }
        None => ModelState::new(
            init_embeddings(r.n_users(), r.n_items(), config.dim, config.seed)?,
            config.clone(),
        ),
    };
    let edges: Vec<(u32, u32)> = r.edges().map(|(u, i)| (u as u32, i as u32)).collect();
    let steps = edges.len().div_ceil(config.batch_size);
    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut total = 0.0;
        let epoch_forward = if config.propagate_once_per_epoch {
            Some(graph::smooth(&state.e0, adj, config.layers)?)
        } else {
            None
        };
        for _ in 0..steps {
            let triplets = sample_triplets(
                r,
                &edges,
                config.batch_size,
                config.negatives_per_positive,
                &mut state.rng,
            );
            total += match &epoch_forward {
                Some(agg) => step_with_forward(&mut state, agg, adj, &triplets)?,
                None => bpr_gradient_step(&mut state, adj, &triplets)?,
            };
        }
        state.epochs_done += 1;
        trace.push(total / steps.max(1) as f64);
        log::debug!(
            "epoch {} loss {:.5}",
            state.epochs_done,
            trace.last().unwrap()
        );
    }
    state.refresh(adj)?;
    Ok((state, trace))
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"CFAIRCK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes `e0`, config and epoch counter as a little-endian binary file.
pub fn save_checkpoint(state: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    save_checkpoint_tagged(state, path, "")
}

/// As [`save_checkpoint`], with a free-form tag (e.g. a config hash).
pub fn save_checkpoint_tagged(state: &ModelState, path: impl AsRef<Path>, tag: &str) -> Result<()> {
    let path = path.as_ref();
    let config = serde_json::to_vec(&state.config)?;
    let mut buf = Vec::with_capacity(64 + config.len() + state.e0.as_slice().len() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        state.n_users() as u64,
        state.n_items() as u64,
        state.e0.dim() as u64,
        state.config.seed,
        state.epochs_done as u64,
        config.len() as u64,
        tag.len() as u64,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&config);
    buf.extend_from_slice(tag.as_bytes());
    for v in state.e0.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).at(path)
}

/// Reads a checkpoint, rejecting it unless it covers exactly
/// `n_users + n_items` nodes.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
    n_users: usize,
    n_items: usize,
) -> Result<ModelState> {
    load_checkpoint_tagged(path, n_users, n_items).map(|(s, _)| s)
}

/// As [`load_checkpoint`], also returning the tag.
pub fn load_checkpoint_tagged(
    path: impl AsRef<Path>,
    n_users: usize,
    n_items: usize,
) -> Result<(ModelState, String)> {
    let path = path.as_ref();
    let bytes = fs::read(path).at(path)?;
    let bad = |d: &str| Error::Format {
        what: "checkpoint",
        detail: d.to_string(),
    };
    let mut cur = bytes.as_slice();
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(bad("truncated"));
        }
        let (head, tail) = cur.split_at(n);
        cur = tail;
        Ok(head)
    };
    if take(8)? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let mut header = [0u64; 7];
    for h in &mut header {
        *h = u64::from_le_bytes(take(8)?.try_into().unwrap());
    }
    let [nu, ni, dim, seed, epochs, cfg_len, tag_len] = header.map(|v| v as usize);
    if nu != n_users || ni != n_items {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint covers {nu} users × {ni} items, dataset has {n_users} × {n_items}"
        )));
    }
    let mut config: TrainConfig = serde_json::from_slice(take(cfg_len)?)?;
    config.seed = seed as u64;
    let tag = String::from_utf8(take(tag_len)?.to_vec()).map_err(|_| bad("tag is not UTF-8"))?;
    let raw = take((nu + ni) * dim * 8)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut state = ModelState::new(EmbeddingTable::from_vec(nu, ni, dim, data)?, config);
    state.epochs_done = epochs;
    Ok((state, tag))
}
