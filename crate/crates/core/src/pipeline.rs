//! End-to-end commands: preprocessing, baseline training, audit,
//! mitigation, ablation and reporting. All state lives under the run's
//! output directory; every file carries the hash of the configuration
//! slice that produced it, and stale inputs are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::counterfactual::{
    self, audit_with, build_final_matrix, direct_imputation_matrix, AuditJournal, AuditOptions,
    AuditResult, SelectionConfig,
};
use crate::dataset::{
    drop_cold_items, kcore_filter, load_amazon_csv, load_dataset, load_movielens, save_dataset,
    temporal_split, IndexedDataset, InteractionMatrix, LogStats, MovieLensFormat,
};
use crate::error::{Error, IoContext, Result};
use crate::graph::{build_adjacency, EmbeddingTable};
use crate::imputer::{self, ImputerConfig};
use crate::metrics::{gain_vector_from_embeddings, Metric, MetricRow, RankingContext};
use crate::trainer::{
    load_checkpoint_tagged, save_checkpoint_tagged, train, ModelState, TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    /// Tab-separated `u.data`.
    #[default]
    MovielensTab,
    /// `::`-separated `ratings.dat`.
    MovielensDoubleColon,
    /// Headered CSV.
    AmazonCsv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub format: DataFormat,
    pub min_degree: usize,
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("data/ml-100k/u.data"),
            format: DataFormat::MovielensTab,
            min_degree: 10,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k_list: Vec<usize>,
    /// Also hide imputed items when comparing models trained on augmented
    /// data (and drop them from the relevant set).
    pub exclude_imputed: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_list: vec![10, 15, 20],
            exclude_imputed: false,
        }
    }
}

/// Everything a run needs. `seed` overrides the seeds of the sub-configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Audit worker threads; 0 lets the thread pool decide.
    pub workers: usize,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub train: TrainConfig,
    pub selection: SelectionConfig,
    pub imputer: ImputerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            workers: 0,
            data: DataConfig::default(),
            eval: EvalConfig::default(),
            train: TrainConfig::default(),
            selection: SelectionConfig::default(),
            imputer: ImputerConfig::default(),
        }
    }
}

/// Pipeline stage, used to scope configuration hashes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Prep,
    Baseline,
    Audit,
    Mitigate,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format {
            what: "config",
            detail: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&fs::read_to_string(path).at(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Copy with the master seed pushed into every sub-config.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.train.seed = self.seed;
        c.selection.seed = self.seed;
        c.imputer.train.seed = self.seed ^ 0x1d7e_57ed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval.k_list.is_empty() || self.eval.k_list.contains(&0) {
            return Err(Error::InvalidArgument(
                "k_list must be non-empty with every k ≥ 1".into(),
            ));
        }
        self.train.validate()?;
        self.selection.validate()
    }

    /// Hash of the configuration slice that determines a stage's outputs.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let c = self.resolved();
        let value = match stage {
            Stage::Prep => serde_json::json!({ "data": c.data }),
            Stage::Baseline => serde_json::json!({ "data": c.data, "train": c.train }),
            Stage::Audit => serde_json::json!({
                "data": c.data, "train": c.train, "selection": c.selection, "imputer": c.imputer,
            }),
            Stage::Mitigate => serde_json::json!({
                "data": c.data, "train": c.train, "selection": c.selection, "imputer": c.imputer, "eval": c.eval,
            }),
        };
        sha256_hex(value.to_string().as_bytes())
    }

    fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

/// Commented reference of every configuration key and its default.
pub fn default_config_reference() -> String {
    let mut out = String::from(
        "# counterfair run configuration: every key with its default value.\n\
         # `seed` overrides train.seed, selection.seed and imputer.train.seed.\n\
         # data.format: movielens-tab | movielens-double-colon | amazon-csv\n\
         # train.optimizer: sgd | adam; selection.metric: ndcg | f1\n\
         # selection.post_relevance: original | imputed\n\
         # imputer.kind: mf_bpr | popularity | external_scores (needs imputer.scores_path)\n\n",
    );
    out.push_str(&RunConfig::default().to_toml());
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).at(dir)?;
    }
    fs::write(path, text).at(path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path).at(path)?)?)
}

fn check_hash(expected: &str, found: &str) -> Result<()> {
    if expected != found {
        return Err(Error::ConfigMismatch {
            expected: expected.to_owned(),
            found: found.to_owned(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepReport {
    pub config_hash: String,
    pub before: LogStats,
    pub after: LogStats,
    pub skipped_rows: usize,
    pub train_interactions: usize,
    pub test_interactions: usize,
    pub adjusted_users: usize,
    /// Items dropped because every interaction fell into the test split.
    #[serde(default)]
    pub cold_items: usize,
}

impl PrepReport {
    pub fn tsv(&self) -> String {
        format!(
            "# config_hash={}\nstage\tusers\titems\tratings\nbefore\t{}\t{}\t{}\nafter\t{}\t{}\t{}\n",
            self.config_hash,
            self.before.users,
            self.before.items,
            self.before.ratings,
            self.after.users,
            self.after.items,
            self.after.ratings
        )
    }
}

const DATASET_FILE: &str = "dataset.txt";
const PREP_FILE: &str = "prep.json";

/// Ingests, filters and splits the ratings file, caching the result.
/// A cache whose hash matches is reused as is.
pub fn cmd_prep(cfg: &RunConfig) -> Result<(IndexedDataset, PrepReport)> {
    cfg.validate()?;
    let hash = cfg.stage_hash(Stage::Prep);
    if let Ok(report) = read_json::<PrepReport>(&cfg.out(PREP_FILE)) {
        if report.config_hash == hash {
            if let Ok(ds) = load_dataset(cfg.out(DATASET_FILE)) {
                log::info!("reusing cached dataset");
                return Ok((ds, report));
            }
        }
    }
    let d = &cfg.data;
    let log = match d.format {
        DataFormat::MovielensTab => load_movielens(&d.path, MovieLensFormat::Tab)?,
        DataFormat::MovielensDoubleColon => load_movielens(&d.path, MovieLensFormat::DoubleColon)?,
        DataFormat::AmazonCsv => load_amazon_csv(&d.path)?,
    };
    let filtered = kcore_filter(&log, d.min_degree)?;
    let mut ds = temporal_split(&filtered, d.train_fraction)?;
    let cold_items = drop_cold_items(&mut ds)?;
    if cold_items > 0 {
        log::warn!("dropped {cold_items} item(s) that only occur in the test split");
    }
    let report = PrepReport {
        config_hash: hash,
        before: log.stats(),
        after: filtered.stats(),
        skipped_rows: log.skipped_rows,
        train_interactions: ds.train.n_edges(),
        test_interactions: ds.test.n_edges(),
        adjusted_users: ds.adjusted_users.len(),
        cold_items,
    };
    fs::create_dir_all(&cfg.output_dir).at(&cfg.output_dir)?;
    save_dataset(&ds, cfg.out(DATASET_FILE))?;
    write_text(&cfg.out("prep_stats.tsv"), &report.tsv())?;
    write_json(&cfg.out(PREP_FILE), &report)?;
    Ok((ds, report))
}

fn load_prepared(cfg: &RunConfig) -> Result<IndexedDataset> {
    let report: PrepReport = read_json(&cfg.out(PREP_FILE))?;
    check_hash(&cfg.stage_hash(Stage::Prep), &report.config_hash)?;
    load_dataset(cfg.out(DATASET_FILE))
}

fn prepared_or_prep(cfg: &RunConfig) -> Result<IndexedDataset> {
    match load_prepared(cfg) {
        Ok(ds) => Ok(ds),
        Err(Error::ConfigMismatch { .. }) | Err(Error::Io { .. }) => {
            cmd_prep(cfg).map(|(ds, _)| ds)
        }
        Err(e) => Err(e),
    }
}

/// Test-context metrics of one model over named user cohorts.
pub fn evaluate_cohorts(
    emb: &EmbeddingTable,
    ctx: &RankingContext,
    cohorts: &[(&str, &[usize])],
    k_list: &[usize],
) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for metric in [Metric::F1, Metric::Ndcg] {
        for &k in k_list {
            let g = gain_vector_from_embeddings(emb, ctx, k, metric)?;
            for (name, users) in cohorts {
                rows.push(MetricRow {
                    scope: (*name).to_owned(),
                    metric,
                    k,
                    value: g.mean_over(users),
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config_hash: String,
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn tsv(&self) -> String {
        format!(
            "# config_hash={}\n{}",
            self.config_hash,
            crate::metrics::metric_rows_tsv(&self.rows)
        )
    }

    pub fn value(&self, scope: &str, metric: Metric, k: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.scope == scope && r.metric == metric && r.k == k)
            .map(|r| r.value)
    }
}

const BASELINE_CKPT: &str = "baseline.ckpt";

/// Trains the baseline on the training split and evaluates every user on
/// the held-out split.
pub fn cmd_train_baseline(cfg: &RunConfig) -> Result<(ModelState, MetricReport)> {
    let cfg = cfg.resolved();
    cfg.validate()?;
    let ds = prepared_or_prep(&cfg)?;
    let hash = cfg.stage_hash(Stage::Baseline);
    let model = train(&ds.train, &cfg.train, None)?;
    save_checkpoint_tagged(&model, cfg.out(BASELINE_CKPT), &hash)?;
    let ctx = RankingContext::held_out(&ds.train, &ds.test)?;
    let all: Vec<usize> = (0..ds.n_users()).collect();
    let rows = evaluate_cohorts(
        model.aggregated().expect("fresh after training"),
        &ctx,
        &[("overall", &all)],
        &cfg.eval.k_list,
    )?;
    let report = MetricReport {
        config_hash: hash,
        rows,
    };
    write_text(&cfg.out("baseline_metrics.tsv"), &report.tsv())?;
    write_json(&cfg.out("baseline_metrics.json"), &report)?;
    Ok((model, report))
}

fn load_baseline(
    cfg: &RunConfig,
    ds: &IndexedDataset,
    r: &InteractionMatrix,
) -> Result<ModelState> {
    let (mut model, tag) =
        load_checkpoint_tagged(cfg.out(BASELINE_CKPT), ds.n_users(), ds.n_items())?;
    check_hash(&cfg.stage_hash(Stage::Baseline), &tag)?;
    model.refresh(&build_adjacency(r)?)?;
    Ok(model)
}

fn baseline_or_train(cfg: &RunConfig, ds: &IndexedDataset) -> Result<ModelState> {
    match load_baseline(cfg, ds, &ds.train) {
        Ok(m) => Ok(m),
        Err(Error::ConfigMismatch { .. }) | Err(Error::Io { .. }) => {
            cmd_train_baseline(cfg).map(|(m, _)| m)
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AuditCommandOptions {
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditFile {
    pub config_hash: String,
    pub result: AuditResult,
}

const AUDIT_FILE: &str = "audit.json";
const JOURNAL_FILE: &str = "audit_journal.jsonl";

/// Stage one over the prepared dataset and the baseline checkpoint.
pub fn cmd_audit(cfg: &RunConfig, opts: AuditCommandOptions) -> Result<AuditResult> {
    let cfg = cfg.resolved();
    cfg.validate()?;
    let ds = load_prepared(&cfg)?;
    let base = load_baseline(&cfg, &ds, &ds.train)?;
    run_audit(&cfg, &ds, &base, opts)
}

fn run_audit(
    cfg: &RunConfig,
    ds: &IndexedDataset,
    base: &ModelState,
    opts: AuditCommandOptions,
) -> Result<AuditResult> {
    let hash = cfg.stage_hash(Stage::Audit);
    let r = &ds.train;
    let adj = build_adjacency(r)?;
    let imputer = imputer::fit(r, &cfg.imputer)?;
    let journal_path = cfg.out(JOURNAL_FILE);
    if !opts.resume && journal_path.exists() {
        fs::remove_file(&journal_path).at(&journal_path)?;
    }
    let journal = AuditJournal::open(&journal_path, &hash)?;
    if !journal.is_empty() {
        log::info!(
            "resuming audit with {} journaled candidate(s)",
            journal.len()
        );
    }
    let result = audit_with(
        base,
        r,
        &adj,
        &imputer,
        &cfg.selection,
        &AuditOptions {
            workers: cfg.workers,
            journal: Some(&journal),
            candidates: None,
        },
    )?;
    write_audit_outputs(cfg, &hash, &result)?;
    Ok(result)
}

fn write_audit_outputs(cfg: &RunConfig, hash: &str, result: &AuditResult) -> Result<()> {
    let mut jsonl = String::new();
    for r in &result.reports {
        let mut v = serde_json::to_value(r)?;
        v["config_hash"] = serde_json::Value::String(hash.to_owned());
        jsonl.push_str(&serde_json::to_string(&v)?);
        jsonl.push('\n');
    }
    write_text(&cfg.out("audit_reports.jsonl"), &jsonl)?;
    let selected = result.reports.iter().filter(|r| r.selected);
    let (n, sum) = selected.fold((0usize, 0.0), |(n, s), r| (n + 1, s + r.pgain));
    let mean_pgain = if n > 0 { sum / n as f64 } else { 0.0 };
    let summary = format!(
        "# config_hash={hash}\n# probable_count={}\n# final_count={}\n# mean_selected_pgain={mean_pgain:.6}\n{}",
        result.probable_count,
        result.final_count,
        result.summary_tsv()
    );
    write_text(&cfg.out("audit_summary.tsv"), &summary)?;
    write_json(
        &cfg.out(AUDIT_FILE),
        &AuditFile {
            config_hash: hash.to_owned(),
            result: result.clone(),
        },
    )
}

fn load_audit(cfg: &RunConfig) -> Result<AuditResult> {
    let file: AuditFile = read_json(&cfg.out(AUDIT_FILE))?;
    check_hash(&cfg.stage_hash(Stage::Audit), &file.config_hash)?;
    Ok(file.result)
}

/// Before/after comparison of one cohort under one metric and cut-off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub arm: String,
    pub cohort: String,
    pub users: usize,
    pub metric: Metric,
    pub k: usize,
    pub before: f64,
    pub after: f64,
    pub pgain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config_hash: String,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn tsv(&self) -> String {
        let mut out = format!(
            "# config_hash={}\narm\tcohort\tusers\tmetric\tk\tbefore\tafter\tpgain\n",
            self.config_hash
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:+.6}\n",
                r.arm, r.cohort, r.users, r.metric, r.k, r.before, r.after, r.pgain
            ));
        }
        out
    }

    pub fn row(&self, arm: &str, cohort: &str, metric: Metric, k: usize) -> Option<&ComparisonRow> {
        self.rows
            .iter()
            .find(|r| r.arm == arm && r.cohort == cohort && r.metric == metric && r.k == k)
    }
}

fn complement(n: usize, users: &[usize]) -> Vec<usize> {
    let mut mask = vec![false; n];
    for &u in users {
        mask[u] = true;
    }
    (0..n).filter(|&u| !mask[u]).collect()
}

/// Compares a baseline and a retrained model on the held-out split, both
/// ranked in the same context. Training items are never rankable; items
/// committed to `imputed` are excluded too when `eval.exclude_imputed`.
fn compare(
    arm: &str,
    before: &ModelState,
    after: &ModelState,
    imputed: &InteractionMatrix,
    ds: &IndexedDataset,
    cohorts: &[(&str, Vec<usize>)],
    eval: &EvalConfig,
) -> Result<Vec<ComparisonRow>> {
    let k_list = &eval.k_list;
    let exclude = if eval.exclude_imputed {
        imputed
    } else {
        &ds.train
    };
    let ctx = RankingContext::held_out(exclude, &ds.test)?;
    let named: Vec<(&str, &[usize])> = cohorts.iter().map(|(n, u)| (*n, u.as_slice())).collect();
    let b = evaluate_cohorts(before.aggregated().expect("fresh"), &ctx, &named, k_list)?;
    let a = evaluate_cohorts(after.aggregated().expect("fresh"), &ctx, &named, k_list)?;
    Ok(b.into_iter()
        .zip(a)
        .map(|(b, a)| ComparisonRow {
            arm: arm.to_owned(),
            users: cohorts
                .iter()
                .find(|(n, _)| *n == b.scope)
                .map_or(0, |(_, u)| u.len()),
            cohort: b.scope,
            metric: b.metric,
            k: b.k,
            before: b.value,
            after: a.value,
            pgain: a.value - b.value,
        })
        .collect())
}

const FINAL_CKPT: &str = "final.ckpt";

/// Stage two: commits selected imputations, retrains from scratch, and
/// compares against the baseline for all, candidate and remaining users.
pub fn cmd_mitigate(cfg: &RunConfig) -> Result<(ModelState, ComparisonReport)> {
    let cfg = cfg.resolved();
    cfg.validate()?;
    let ds = load_prepared(&cfg)?;
    let base = load_baseline(&cfg, &ds, &ds.train)?;
    let result = load_audit(&cfg)?;
    run_mitigation(&cfg, &ds, &base, &result)
}

fn run_mitigation(
    cfg: &RunConfig,
    ds: &IndexedDataset,
    base: &ModelState,
    result: &AuditResult,
) -> Result<(ModelState, ComparisonReport)> {
    if result.base_fingerprint != counterfactual::model_fingerprint(base) {
        return Err(Error::InvalidArgument(
            "audit was run against a different baseline".into(),
        ));
    }
    let hash = cfg.stage_hash(Stage::Mitigate);
    let final_matrix = build_final_matrix(&ds.train, result)?;
    let model = train(&final_matrix, &cfg.train, None)?;
    save_checkpoint_tagged(&model, cfg.out(FINAL_CKPT), &hash)?;
    let candidates = result.selected_users();
    let cohorts = [
        ("overall", (0..ds.n_users()).collect()),
        ("candidate", candidates.clone()),
        ("remaining", complement(ds.n_users(), &candidates)),
    ];
    let rows = compare("with", base, &model, &final_matrix, ds, &cohorts, &cfg.eval)?;
    let report = ComparisonReport {
        config_hash: hash,
        rows,
    };
    write_text(&cfg.out("mitigation.tsv"), &report.tsv())?;
    write_json(&cfg.out("mitigation.json"), &report)?;
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config_hash: String,
    /// |U'|: users imputed directly by the arm without counterfactual runs.
    pub without_count: usize,
    /// |U^f|: users kept by the counterfactual audit.
    pub with_count: usize,
    pub rows: Vec<ComparisonRow>,
}

impl AblationReport {
    pub fn tsv(&self) -> String {
        let table = ComparisonReport {
            config_hash: self.config_hash.clone(),
            rows: self.rows.clone(),
        }
        .tsv();
        let mut lines = table.lines();
        let head = lines.next().unwrap_or_default();
        let mut out = format!(
            "{head}\n# without_count={}\n# with_count={}\n",
            self.without_count, self.with_count
        );
        for l in lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }
}

/// Runs both arms: "without" imputes every probable candidate directly,
/// "with" keeps only audited candidates. Missing upstream outputs are
/// produced on the way; existing ones are reused.
pub fn cmd_ablation(cfg: &RunConfig, opts: AuditCommandOptions) -> Result<AblationReport> {
    let cfg = cfg.resolved();
    cfg.validate()?;
    let ds = prepared_or_prep(&cfg)?;
    let base = baseline_or_train(&cfg, &ds)?;
    let result = match load_audit(&cfg) {
        Ok(r) => r,
        Err(Error::ConfigMismatch { .. }) | Err(Error::Io { .. }) => {
            run_audit(&cfg, &ds, &base, opts)?
        }
        Err(e) => return Err(e),
    };
    let (_, with_report) = run_mitigation(&cfg, &ds, &base, &result)?;

    let imputer = imputer::fit(&ds.train, &cfg.imputer)?;
    let direct = direct_imputation_matrix(&ds.train, &result.probable, &imputer, &cfg.selection)?;
    let without_model = train(&direct, &cfg.train, None)?;
    let cohorts = [
        ("candidate", result.probable.clone()),
        ("remaining", complement(ds.n_users(), &result.probable)),
    ];
    let mut rows = compare(
        "without",
        &base,
        &without_model,
        &direct,
        &ds,
        &cohorts,
        &cfg.eval,
    )?;
    rows.extend(
        with_report
            .rows
            .into_iter()
            .filter(|r| r.cohort != "overall"),
    );
    let report = AblationReport {
        config_hash: cfg.stage_hash(Stage::Mitigate),
        without_count: result.probable_count,
        with_count: result.final_count,
        rows,
    };
    write_text(&cfg.out("ablation.tsv"), &report.tsv())?;
    write_json(&cfg.out("ablation.json"), &report)?;
    Ok(report)
}

/// Concatenates every report present in the output directory whose hash
/// matches the current configuration.
pub fn cmd_report(cfg: &RunConfig) -> Result<String> {
    let cfg = cfg.resolved();
    let mut out = String::new();
    let sections: [(&str, &str, Stage); 5] = [
        ("preprocessing", "prep_stats.tsv", Stage::Prep),
        ("baseline", "baseline_metrics.tsv", Stage::Baseline),
        ("audit", "audit_summary.tsv", Stage::Audit),
        ("mitigation", "mitigation.tsv", Stage::Mitigate),
        ("ablation", "ablation.tsv", Stage::Mitigate),
    ];
    for (title, file, stage) in sections {
        let path = cfg.out(file);
        let Ok(text) = fs::read_to_string(&path) else {
            continue;
        };
        let expected = format!("# config_hash={}", cfg.stage_hash(stage));
        if text.lines().next() != Some(expected.as_str()) {
            log::warn!(
                "{} was produced by a different configuration; skipped",
                path.display()
            );
            continue;
        }
        out.push_str(&format!("== {title} ==\n{text}\n"));
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no reports for this configuration under {}",
            cfg.output_dir.display()
        )));
    }
    Ok(out)
}
