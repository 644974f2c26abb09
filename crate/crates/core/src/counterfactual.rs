//! Two-stage counterfactual imputation.
//!
//! Stage one ([`audit`]) takes the probable under-served users, imputes a
//! few unseen items for each one in isolation, fine-tunes a copy of the base
//! model on the edited graph, and measures the change in training-data
//! ranking quality for that user and summed over all users. Users for whom
//! either change is positive are kept. Stage two ([`build_final_matrix`],
//! [`mitigate`]) commits the kept users' items and retrains.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::InteractionMatrix;
use crate::error::{Error, IoContext, Result};
use crate::graph::{predict_scores, NormalizedAdjacency};
use crate::imputer::ImputerHandle;
use crate::metrics::{
    gain_vector, gain_vector_from_embeddings, pgain, pgain_global, topk, GainVector, Metric,
    RankingContext,
};
use crate::trainer::{train, train_with_adjacency, ModelState, TrainConfig};

/// Relevance set used when scoring the fine-tuned model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PostRelevance {
    /// The original interactions `R`; imputed items earn nothing.
    #[default]
    Original,
    /// The edited matrix `R'`, imputed items included.
    Imputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gain_quantile: f64,
    pub degree_quantile: f64,
    pub fine_tune_epochs: usize,
    pub seed: u64,
    /// Cut-off of the training-data gain metric.
    pub k: usize,
    pub metric: Metric,
    pub post_relevance: PostRelevance,
    /// Retrain each candidate from scratch instead of fine-tuning the base.
    pub full_retrain: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 0.5,
            gain_quantile: 0.25,
            degree_quantile: 0.25,
            fine_tune_epochs: 1,
            seed: 0,
            k: 20,
            metric: Metric::Ndcg,
            post_relevance: PostRelevance::Original,
            full_retrain: false,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        for (name, q) in [
            ("gain_quantile", self.gain_quantile),
            ("degree_quantile", self.degree_quantile),
        ] {
            if !(0.0..=1.0).contains(&q) {
                return bad(format!("{name} must lie in [0, 1], got {q}"));
            }
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        Ok(())
    }
}

/// Linearly interpolated quantile (the usual "type 7" definition).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Training-data gains of the base model (relevance = `r`, nothing excluded).
pub fn prior_gains(
    base: &ModelState,
    r: &InteractionMatrix,
    k: usize,
    metric: Metric,
) -> Result<GainVector> {
    gain_vector(base, &RankingContext::training(r), k, metric)
}

/// Users with a low prior gain or few interactions (union of the two
/// bottom quantiles), ascending.
pub fn select_probable(
    gains: &GainVector,
    r: &InteractionMatrix,
    cfg: &SelectionConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    if gains.len() != r.n_users() {
        return Err(Error::ShapeMismatch(
            "gain vector and matrix cover different users".into(),
        ));
    }
    if gains.is_empty() {
        return Ok(Vec::new());
    }
    let degrees: Vec<f64> = (0..r.n_users()).map(|u| r.user_degree(u) as f64).collect();
    let gain_cut = quantile(&gains.values, cfg.gain_quantile);
    let degree_cut = quantile(&degrees, cfg.degree_quantile);
    let users: Vec<usize> = (0..r.n_users())
        .filter(|&u| gains.values[u] <= gain_cut || degrees[u] <= degree_cut)
        .collect();
    if users.is_empty() {
        log::warn!("no probable candidates selected");
    }
    Ok(users)
}

/// `max(1, ⌊α · (|E| / (|U| · deg))^β⌋)`.
pub fn imputation_count_for(
    degree: usize,
    n_edges: usize,
    n_users: usize,
    alpha: f64,
    beta: f64,
) -> usize {
    let ratio = n_edges as f64 / (n_users as f64 * degree.max(1) as f64);
    let c = (alpha * ratio.powf(beta)).floor();
    if c.is_finite() && c >= 1.0 {
        c as usize
    } else {
        1
    }
}

pub fn imputation_count(u: usize, r: &InteractionMatrix, cfg: &SelectionConfig) -> usize {
    imputation_count_for(
        r.user_degree(u),
        r.n_edges(),
        r.n_users(),
        cfg.alpha,
        cfg.beta,
    )
}

/// Per-candidate seed, independent of audit order.
pub fn derive_seed(seed: u64, user: usize) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed
        ^ (user as u64)
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(0x632b_e59b_d9b4_e019);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub user: usize,
    pub degree: usize,
    pub prior_gain: f64,
    pub post_gain: f64,
    /// Items imputed for the counterfactual run.
    pub imputed_items: Vec<usize>,
    /// Target imputation size.
    pub count: usize,
    pub pgain: f64,
    pub pgain_global: f64,
    pub selected: bool,
    /// The fine-tuned model's own top unseen items for the user; these are
    /// what stage two commits.
    pub updated_items: Vec<usize>,
}

/// A candidate is kept when its own gain or the summed gain improved.
pub fn selection_verdict(pgain: f64, pgain_global: f64) -> bool {
    pgain > 0.0 || pgain_global > 0.0
}

fn fine_tune_config(base: &ModelState, cfg: &SelectionConfig, user: usize) -> TrainConfig {
    let mut tc = base.config.clone();
    tc.seed = derive_seed(cfg.seed, user);
    if !cfg.full_retrain {
        tc.epochs = cfg.fine_tune_epochs;
    }
    tc
}

/// Counterfactual run for user `u` with an explicit imputed item list.
/// `base`, `r` and `adj` are left untouched.
#[allow(clippy::too_many_arguments)]
pub fn counterfactual_run_with_items(
    base: &ModelState,
    r: &InteractionMatrix,
    adj: &NormalizedAdjacency,
    u: usize,
    items: &[usize],
    count: usize,
    prior: &GainVector,
    cfg: &SelectionConfig,
) -> Result<CandidateReport> {
    let r_edit = r.with_user_items(u, items)?;
    let adj_edit = adj.with_injected_edges(u, items)?;
    let tc = fine_tune_config(base, cfg, u);
    let warm = (!cfg.full_retrain).then_some(base);
    let (tuned, _) = train_with_adjacency(&r_edit, &adj_edit, &tc, warm)?;
    let emb = tuned.aggregated().expect("training refreshes aggregation");
    let ctx = match cfg.post_relevance {
        PostRelevance::Original => RankingContext::training(r),
        PostRelevance::Imputed => RankingContext::training(&r_edit),
    };
    let post = gain_vector_from_embeddings(emb, &ctx, cfg.k, cfg.metric)?;
    let pg = pgain(&post, prior, u)?;
    let pg_global = pgain_global(&post, prior)?;
    let seen: Vec<usize> = r.user_items(u).iter().map(|&i| i as usize).collect();
    let updated_items = topk(&predict_scores(emb, u), count, &seen).items;
    Ok(CandidateReport {
        user: u,
        degree: r.user_degree(u),
        prior_gain: prior.values[u],
        post_gain: post.values[u],
        imputed_items: items.to_vec(),
        count,
        pgain: pg,
        pgain_global: pg_global,
        selected: selection_verdict(pg, pg_global),
        updated_items,
    })
}

/// Imputes the imputer's top `imputation_count(u)` unseen items for `u`,
/// fine-tunes a copy of `base`, and scores the change.
pub fn counterfactual_run(
    base: &ModelState,
    r: &InteractionMatrix,
    adj: &NormalizedAdjacency,
    u: usize,
    imputer: &ImputerHandle,
    prior: &GainVector,
    cfg: &SelectionConfig,
) -> Result<CandidateReport> {
    if !base.is_fresh() {
        return Err(Error::InvalidArgument(
            "base model aggregation is stale".into(),
        ));
    }
    let count = imputation_count(u, r, cfg);
    let items = imputer.top_unseen(u, count, r)?.items;
    if items.is_empty() {
        return Ok(CandidateReport {
            user: u,
            degree: r.user_degree(u),
            prior_gain: prior.values[u],
            post_gain: prior.values[u],
            imputed_items: Vec::new(),
            count: 0,
            pgain: 0.0,
            pgain_global: 0.0,
            selected: false,
            updated_items: Vec::new(),
        });
    }
    counterfactual_run_with_items(base, r, adj, u, &items, count, prior, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    /// SHA-256 of the base model's layer-0 embeddings.
    pub base_fingerprint: String,
    pub probable: Vec<usize>,
    /// Sorted by user.
    pub reports: Vec<CandidateReport>,
    pub probable_count: usize,
    pub final_count: usize,
}

impl AuditResult {
    pub fn selected_users(&self) -> Vec<usize> {
        self.reports
            .iter()
            .filter(|r| r.selected)
            .map(|r| r.user)
            .collect()
    }

    /// Tab-separated summary, one line per candidate.
    pub fn summary_tsv(&self) -> String {
        let mut out = String::from("user\tdeg\tprior\tpgain\tpgain_global\tselected\n");
        for r in &self.reports {
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
                r.user, r.degree, r.prior_gain, r.pgain, r.pgain_global, r.selected
            ));
        }
        out
    }

    /// One JSON object per line, one line per candidate.
    pub fn reports_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.reports {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Hex SHA-256 of a model's layer-0 embeddings.
pub fn model_fingerprint(state: &ModelState) -> String {
    let mut h = Sha256::new();
    for v in state.e0.as_slice() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct JournalEntry {
    config_hash: String,
    user: usize,
    report: CandidateReport,
}

/// Append-only record of finished counterfactual runs keyed by
/// `(config hash, user)`, so an interrupted audit can resume.
#[derive(Debug)]
pub struct AuditJournal {
    path: PathBuf,
    config_hash: String,
    done: BTreeMap<usize, CandidateReport>,
    file: Mutex<fs::File>,
}

impl AuditJournal {
    /// Opens (or creates) the journal, keeping entries whose hash matches.
    /// A torn final line from an interrupted write is ignored.
    pub fn open(path: impl AsRef<Path>, config_hash: &str) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut done = BTreeMap::new();
        if path.exists() {
            let text = fs::read_to_string(&path).at(&path)?;
            for line in text.lines() {
                if let Ok(e) = serde_json::from_str::<JournalEntry>(line) {
                    if e.config_hash == config_hash && e.report.user == e.user {
                        done.insert(e.user, e.report);
                    }
                }
            }
            // start appends on a fresh line
            if !text.is_empty() && !text.ends_with('\n') {
                OpenOptions::new()
                    .append(true)
                    .open(&path)
                    .at(&path)?
                    .write_all(b"\n")
                    .at(&path)?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .at(&path)?;
        Ok(Self {
            path,
            config_hash: config_hash.to_owned(),
            done,
            file: Mutex::new(file),
        })
    }

    pub fn get(&self, user: usize) -> Option<&CandidateReport> {
        self.done.get(&user)
    }

    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }

    fn record(&self, report: &CandidateReport) -> Result<()> {
        let line = serde_json::to_string(&JournalEntry {
            config_hash: self.config_hash.clone(),
            user: report.user,
            report: report.clone(),
        })?;
        let mut f = self.file.lock().expect("journal lock");
        writeln!(f, "{line}").at(&self.path)?;
        f.flush().at(&self.path)
    }
}

/// Execution knobs for [`audit_with`].
#[derive(Debug, Default)]
pub struct AuditOptions<'a> {
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
    pub journal: Option<&'a AuditJournal>,
    /// Overrides the probable set (order is irrelevant).
    pub candidates: Option<Vec<usize>>,
}

pub fn audit(
    base: &ModelState,
    r: &InteractionMatrix,
    adj: &NormalizedAdjacency,
    imputer: &ImputerHandle,
    cfg: &SelectionConfig,
) -> Result<AuditResult> {
    audit_with(base, r, adj, imputer, cfg, &AuditOptions::default())
}

/// Runs every probable candidate against the same base model. Runs are
/// independent; reports are merged by user index.
pub fn audit_with(
    base: &ModelState,
    r: &InteractionMatrix,
    adj: &NormalizedAdjacency,
    imputer: &ImputerHandle,
    cfg: &SelectionConfig,
    opts: &AuditOptions<'_>,
) -> Result<AuditResult> {
    cfg.validate()?;
    let prior = prior_gains(base, r, cfg.k, cfg.metric)?;
    let probable = match &opts.candidates {
        Some(c) => {
            let mut c = c.clone();
            c.sort_unstable();
            c.dedup();
            c
        }
        None => select_probable(&prior, r, cfg)?,
    };
    let run = |u: usize| -> Result<CandidateReport> {
        if let Some(done) = opts.journal.and_then(|j| j.get(u)) {
            return Ok(done.clone());
        }
        let report = counterfactual_run(base, r, adj, u, imputer, &prior, cfg)?;
        if let Some(j) = opts.journal {
            j.record(&report)?;
        }
        log::info!(
            "candidate {u}: |C| = {}, pgain {:+.4}, global {:+.4}, selected {}",
            report.imputed_items.len(),
            report.pgain,
            report.pgain_global,
            report.selected
        );
        Ok(report)
    };
    let reports: Vec<CandidateReport> = if opts.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| probable.par_iter().map(|&u| run(u)).collect::<Result<_>>())?
    } else {
        probable
            .par_iter()
            .map(|&u| run(u))
            .collect::<Result<_>>()?
    };
    let final_count = reports.iter().filter(|r| r.selected).count();
    Ok(AuditResult {
        base_fingerprint: model_fingerprint(base),
        probable_count: probable.len(),
        probable,
        reports,
        final_count,
    })
}

/// `R^f`: `R` plus, for each selected candidate, its updated items.
pub fn build_final_matrix(
    r: &InteractionMatrix,
    result: &AuditResult,
) -> Result<InteractionMatrix> {
    let mut out = r.clone();
    for rep in result.reports.iter().filter(|rep| rep.selected) {
        out = out.with_user_items(rep.user, &rep.updated_items)?;
    }
    Ok(out)
}

/// `R` plus the imputer's top items for every listed user, with no
/// counterfactual filtering.
pub fn direct_imputation_matrix(
    r: &InteractionMatrix,
    users: &[usize],
    imputer: &ImputerHandle,
    cfg: &SelectionConfig,
) -> Result<InteractionMatrix> {
    let mut out = r.clone();
    for &u in users {
        let items = imputer.top_unseen(u, imputation_count(u, r, cfg), r)?.items;
        out = out.with_user_items(u, &items)?;
    }
    Ok(out)
}

/// Retrains from a fresh initialization on `R^f`.
pub fn mitigate(
    r: &InteractionMatrix,
    result: &AuditResult,
    train_cfg: &TrainConfig,
) -> Result<ModelState> {
    let final_matrix = build_final_matrix(r, result)?;
    train(&final_matrix, train_cfg, None)
}
