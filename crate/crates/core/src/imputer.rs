//! Auxiliary recommender that proposes unseen items to impute.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::InteractionMatrix;
use crate::error::{Error, IoContext, Result};
use crate::graph::{predict_scores, EmbeddingTable};
use crate::metrics::topk;
use crate::trainer::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImputerKind {
    /// Matrix factorization under BPR: the graph model with zero layers.
    #[default]
    MfBpr,
    /// Item degree in the training matrix.
    Popularity,
    /// Scores read from a file produced elsewhere.
    ExternalScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputerConfig {
    pub kind: ImputerKind,
    /// Used by `mf_bpr`; `layers` is forced to 0.
    pub train: TrainConfig,
    /// Used by `external_scores`.
    pub scores_path: Option<PathBuf>,
}

impl Default for ImputerConfig {
    fn default() -> Self {
        Self {
            kind: ImputerKind::MfBpr,
            train: TrainConfig {
                epochs: 30,
                learning_rate: 0.05,
                lambda_reg: 1e-2,
                layers: 0,
                ..TrainConfig::default()
            },
            scores_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Scorer {
    Unfitted,
    Factors(EmbeddingTable),
    Popularity(Vec<f64>),
    Dense { n_items: usize, scores: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputerHandle {
    kind: ImputerKind,
    scorer: Scorer,
}

/// Items returned by [`ImputerHandle::top_unseen`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unseen {
    pub items: Vec<usize>,
    /// Fewer than the requested number of unseen items existed.
    pub short: bool,
}

impl ImputerHandle {
    pub fn unfitted(kind: ImputerKind) -> Self {
        Self {
            kind,
            scorer: Scorer::Unfitted,
        }
    }

    pub fn kind(&self) -> ImputerKind {
        self.kind
    }

    pub fn is_fitted(&self) -> bool {
        self.scorer != Scorer::Unfitted
    }

    /// Fits on the training matrix only.
    pub fn fit(&mut self, r: &InteractionMatrix, config: &ImputerConfig) -> Result<()> {
        self.scorer = match self.kind {
            ImputerKind::MfBpr => {
                let cfg = TrainConfig {
                    layers: 0,
                    ..config.train.clone()
                };
                let state = train(r, &cfg, None)?;
                Scorer::Factors(
                    state
                        .aggregated()
                        .expect("train refreshes aggregation")
                        .clone(),
                )
            }
            ImputerKind::Popularity => {
                Scorer::Popularity((0..r.n_items()).map(|i| r.item_degree(i) as f64).collect())
            }
            ImputerKind::ExternalScores => {
                let path = config.scores_path.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("external_scores imputer needs scores_path".into())
                })?;
                let scores = read_score_file(path, r.n_users(), r.n_items())?;
                Scorer::Dense {
                    n_items: r.n_items(),
                    scores,
                }
            }
        };
        Ok(())
    }

    /// Preference scores of user `u` over every item.
    pub fn scores(&self, u: usize) -> Result<Vec<f64>> {
        match &self.scorer {
            Scorer::Unfitted => Err(Error::NotFitted),
            Scorer::Factors(e) => Ok(predict_scores(e, u)),
            Scorer::Popularity(p) => Ok(p.clone()),
            Scorer::Dense { n_items, scores } => {
                Ok(scores[u * n_items..(u + 1) * n_items].to_vec())
            }
        }
    }

    /// The `n` highest-scoring items outside `I(u)`; index order on ties.
    pub fn top_unseen(&self, u: usize, n: usize, r: &InteractionMatrix) -> Result<Unseen> {
        if u >= r.n_users() {
            return Err(Error::OutOfRange {
                index: u,
                len: r.n_users(),
            });
        }
        let scores = self.scores(u)?;
        if scores.len() != r.n_items() {
            return Err(Error::ShapeMismatch(
                "imputer fitted on a different catalogue".into(),
            ));
        }
        if n == 0 {
            return Ok(Unseen {
                items: Vec::new(),
                short: false,
            });
        }
        let seen: Vec<usize> = r.user_items(u).iter().map(|&i| i as usize).collect();
        let ranked = topk(&scores, n, &seen);
        Ok(Unseen {
            items: ranked.items,
            short: ranked.short,
        })
    }
}

/// Fits a fresh imputer of `config.kind`.
pub fn fit(r: &InteractionMatrix, config: &ImputerConfig) -> Result<ImputerHandle> {
    let mut h = ImputerHandle::unfitted(config.kind);
    h.fit(r, config)?;
    Ok(h)
}

/// Reads an external score matrix.
///
/// The first line is `n_users n_items [sparse|dense]` (sparse when
/// omitted). Sparse files hold `u i score` triples; unlisted pairs score
/// `-inf`. Dense files hold one row of `n_items` scores per user.
pub fn read_score_file(path: &Path, n_users: usize, n_items: usize) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).at(path)?;
    let bad = |d: String| Error::Format {
        what: "score file",
        detail: d,
    };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    let dense = match head.get(2) {
        None | Some(&"sparse") => false,
        Some(&"dense") => true,
        Some(other) => return Err(bad(format!("unknown layout `{other}`"))),
    };
    if head.len() > 3 || head.len() < 2 {
        return Err(bad(format!("bad header `{header}`")));
    }
    let dims: Vec<usize> = head[..2]
        .iter()
        .map(|t| t.parse().map_err(|_| bad(format!("bad header `{header}`"))))
        .collect::<Result<_>>()?;
    if dims != [n_users, n_items] {
        return Err(Error::ShapeMismatch(format!(
            "score file is {dims:?}, training matrix is [{n_users}, {n_items}]"
        )));
    }
    let num = |t: &str| -> Result<f64> { t.parse().map_err(|_| bad(format!("bad value `{t}`"))) };
    let mut scores = vec![f64::NEG_INFINITY; n_users * n_items];
    if dense {
        let rows: Vec<&str> = lines.collect();
        if rows.len() != n_users {
            return Err(Error::ShapeMismatch(format!(
                "{} dense rows for {n_users} users",
                rows.len()
            )));
        }
        for (u, line) in rows.iter().enumerate() {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != n_items {
                return Err(Error::ShapeMismatch(format!(
                    "row {u} has {} values, expected {n_items}",
                    tokens.len()
                )));
            }
            for (i, t) in tokens.iter().enumerate() {
                scores[u * n_items + i] = num(t)?;
            }
        }
    } else {
        for line in lines {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let [u, i, s] = tokens[..] else {
                return Err(bad(format!("expected `u i score`, got `{line}`")));
            };
            let u: usize = u.parse().map_err(|_| bad(format!("bad line `{line}`")))?;
            let i: usize = i.parse().map_err(|_| bad(format!("bad line `{line}`")))?;
            if u >= n_users || i >= n_items {
                return Err(Error::ShapeMismatch(format!(
                    "entry ({u}, {i}) outside {n_users} × {n_items}"
                )));
            }
            scores[u * n_items + i] = num(s)?;
        }
    }
    Ok(scores)
}
