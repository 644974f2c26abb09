//! Rating-file ingestion, k-core filtering and per-user temporal splitting.
//!
//! Ratings are treated as implicit feedback: any rating is an interaction.
//! Rating values survive in [`InteractionLog`] for provenance only.

mod cache;
mod matrix;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cache::{load_dataset, save_dataset, CACHE_VERSION};
pub use matrix::InteractionMatrix;

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InteractionLog {
    pub records: Vec<Rating>,
    /// Rows that failed to parse during ingestion.
    pub skipped_rows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MovieLensFormat {
    /// `user \t item \t rating \t timestamp` (ML-100K `u.data`).
    Tab,
    /// `user::item::rating::timestamp` (ML-1M `ratings.dat`).
    DoubleColon,
}

/// Row counts for a log, as reported before/after preprocessing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogStats {
    pub users: usize,
    pub items: usize,
    pub ratings: usize,
}

impl InteractionLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn stats(&self) -> LogStats {
        let users: HashSet<&str> = self.records.iter().map(|r| r.user.as_str()).collect();
        let items: HashSet<&str> = self.records.iter().map(|r| r.item.as_str()).collect();
        LogStats {
            users: users.len(),
            items: items.len(),
            ratings: self.records.len(),
        }
    }
}

fn parse_row(line: &str, format: MovieLensFormat) -> Option<Rating> {
    let fields: Vec<&str> = match format {
        MovieLensFormat::Tab => line.split('\t').collect(),
        MovieLensFormat::DoubleColon => line.split("::").collect(),
    };
    if fields.len() != 4 {
        return None;
    }
    let user = fields[0].trim();
    let item = fields[1].trim();
    if user.is_empty() || item.is_empty() {
        return None;
    }
    let rating: f64 = fields[2]
        .trim()
        .parse()
        .ok()
        .filter(|r: &f64| r.is_finite())?;
    let timestamp = parse_timestamp(fields[3])?;
    Some(Rating {
        user: user.to_owned(),
        item: item.to_owned(),
        rating,
        timestamp,
    })
}

fn parse_timestamp(field: &str) -> Option<i64> {
    let field = field.trim();
    let ts = match field.parse::<i64>() {
        Ok(ts) => ts,
        // Some exports write timestamps as floats ("881250949.0").
        Err(_) => {
            let f: f64 = field.parse().ok()?;
            if !f.is_finite() || f.fract() != 0.0 {
                return None;
            }
            f as i64
        }
    };
    (ts >= 0).then_some(ts)
}

/// Reads a MovieLens ratings file. Malformed rows are skipped and counted.
pub fn load_movielens(path: impl AsRef<Path>, format: MovieLensFormat) -> Result<InteractionLog> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).at(path)?;
    let mut log = InteractionLog::default();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_row(line, format) {
            Some(r) => log.records.push(r),
            None => log.skipped_rows += 1,
        }
    }
    if log.records.is_empty() {
        return Err(Error::NoValidRows(path.display().to_string()));
    }
    if log.skipped_rows > 0 {
        log::warn!(
            "{}: skipped {} malformed row(s)",
            path.display(),
            log.skipped_rows
        );
    }
    Ok(log)
}

const USER_COLUMNS: &[&str] = &["user", "user_id", "userid", "reviewerid", "customer_id"];
const ITEM_COLUMNS: &[&str] = &[
    "item",
    "item_id",
    "itemid",
    "asin",
    "product_id",
    "parent_asin",
];
const RATING_COLUMNS: &[&str] = &["rating", "overall", "score", "star_rating"];
const TIME_COLUMNS: &[&str] = &["timestamp", "time", "unixreviewtime", "unix_time"];

/// Reads a headered CSV (Amazon review dumps). Columns are located by name,
/// so their order does not matter. Duplicate rows are kept here.
pub fn load_amazon_csv(path: impl AsRef<Path>) -> Result<InteractionLog> {
    let path = path.as_ref();
    let file = fs::File::open(path).at(path)?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect();
    let find = |names: &[&str]| headers.iter().position(|h| names.contains(&h.as_str()));
    let cols = [
        ("user", find(USER_COLUMNS)),
        ("item", find(ITEM_COLUMNS)),
        ("rating", find(RATING_COLUMNS)),
        ("timestamp", find(TIME_COLUMNS)),
    ];
    let missing: Vec<String> = cols
        .iter()
        .filter(|(_, c)| c.is_none())
        .map(|(n, _)| n.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingColumns {
            path: path.display().to_string(),
            missing,
        });
    }
    let [u, i, r, t] = cols.map(|(_, c)| c.unwrap());
    let mut log = InteractionLog::default();
    for row in reader.records() {
        let Ok(row) = row else {
            log.skipped_rows += 1;
            continue;
        };
        let parsed = (|| {
            let user = row.get(u)?.trim();
            let item = row.get(i)?.trim();
            if user.is_empty() || item.is_empty() {
                return None;
            }
            let rating: f64 = row.get(r)?.trim().parse().ok()?;
            let timestamp = parse_timestamp(row.get(t)?)?;
            Some(Rating {
                user: user.to_owned(),
                item: item.to_owned(),
                rating,
                timestamp,
            })
        })();
        match parsed {
            Some(rec) => log.records.push(rec),
            None => log.skipped_rows += 1,
        }
    }
    if log.records.is_empty() {
        return Err(Error::NoValidRows(path.display().to_string()));
    }
    Ok(log)
}

/// Collapses repeated (user, item) pairs, keeping the latest timestamp
/// (first occurrence on ties). Survivors keep their original relative order.
pub fn deduplicate(log: &InteractionLog) -> InteractionLog {
    let mut best: HashMap<(&str, &str), usize> = HashMap::new();
    for (idx, r) in log.records.iter().enumerate() {
        best.entry((&r.user, &r.item))
            .and_modify(|b| {
                if r.timestamp > log.records[*b].timestamp {
                    *b = idx;
                }
            })
            .or_insert(idx);
    }
    let mut keep: Vec<usize> = best.into_values().collect();
    keep.sort_unstable();
    InteractionLog {
        records: keep.into_iter().map(|i| log.records[i].clone()).collect(),
        skipped_rows: log.skipped_rows,
    }
}

/// Deduplicates, then repeatedly drops users and items with fewer than
/// `min_degree` interactions until nothing changes.
pub fn kcore_filter(log: &InteractionLog, min_degree: usize) -> Result<InteractionLog> {
    if min_degree == 0 {
        return Err(Error::InvalidArgument(
            "min_degree must be at least 1".into(),
        ));
    }
    let dedup = deduplicate(log);
    let mut alive: Vec<bool> = vec![true; dedup.records.len()];
    loop {
        let mut user_deg: HashMap<&str, usize> = HashMap::new();
        let mut item_deg: HashMap<&str, usize> = HashMap::new();
        for (r, _) in dedup.records.iter().zip(&alive).filter(|(_, a)| **a) {
            *user_deg.entry(&r.user).or_default() += 1;
            *item_deg.entry(&r.item).or_default() += 1;
        }
        let mut changed = false;
        for (r, a) in dedup.records.iter().zip(alive.iter_mut()) {
            if *a
                && (user_deg[r.user.as_str()] < min_degree
                    || item_deg[r.item.as_str()] < min_degree)
            {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let records: Vec<Rating> = dedup
        .records
        .into_iter()
        .zip(alive)
        .filter_map(|(r, a)| a.then_some(r))
        .collect();
    if records.is_empty() {
        return Err(Error::EmptyKCore(min_degree));
    }
    Ok(InteractionLog {
        records,
        skipped_rows: log.skipped_rows,
    })
}

/// Indexed train/test split of a filtered log.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedDataset {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub train: InteractionMatrix,
    pub test: InteractionMatrix,
    /// Users whose ceiling split would have left the test side empty and
    /// had their latest interaction moved to test.
    pub adjusted_users: Vec<usize>,
}

impl IndexedDataset {
    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }
}

/// Number of training interactions for a user with `n` interactions.
pub fn train_count(n: usize, train_fraction: f64) -> usize {
    // The epsilon keeps exact products such as 0.8 * 10 from rounding up.
    ((train_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Per-user chronological split: the first `⌈train_fraction · n_u⌉`
/// interactions of each user go to train, the rest to test.
///
/// Users and items are indexed by first appearance in the log sorted by
/// timestamp (stable w.r.t. file order). Each user's interactions are then
/// ordered by (timestamp, item index).
pub fn temporal_split(log: &InteractionLog, train_fraction: f64) -> Result<IndexedDataset> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if log.is_empty() {
        return Err(Error::InvalidArgument("empty interaction log".into()));
    }
    let log = deduplicate(log);
    let mut order: Vec<usize> = (0..log.records.len()).collect();
    order.sort_by_key(|&i| log.records[i].timestamp);

    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut item_index: HashMap<&str, usize> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut per_user: Vec<Vec<(i64, usize)>> = Vec::new();
    for &idx in &order {
        let r = &log.records[idx];
        let u = *user_index.entry(&r.user).or_insert_with(|| {
            user_ids.push(r.user.clone());
            per_user.push(Vec::new());
            user_ids.len() - 1
        });
        let i = *item_index.entry(&r.item).or_insert_with(|| {
            item_ids.push(r.item.clone());
            item_ids.len() - 1
        });
        per_user[u].push((r.timestamp, i));
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut adjusted_users = Vec::new();
    for (u, events) in per_user.iter_mut().enumerate() {
        if events.len() < 2 {
            return Err(Error::TooFewInteractions {
                user: user_ids[u].clone(),
                count: events.len(),
            });
        }
        events.sort_unstable();
        let mut n_train = train_count(events.len(), train_fraction).max(1);
        if n_train >= events.len() {
            n_train = events.len() - 1;
            adjusted_users.push(u);
        }
        train.extend(events[..n_train].iter().map(|&(_, i)| (u, i)));
        test.extend(events[n_train..].iter().map(|&(_, i)| (u, i)));
    }
    if !adjusted_users.is_empty() {
        log::warn!(
            "{} user(s) had their latest interaction moved to test",
            adjusted_users.len()
        );
    }

    let (n_users, n_items) = (user_ids.len(), item_ids.len());
    Ok(IndexedDataset {
        train: InteractionMatrix::from_edges(n_users, n_items, train)?,
        test: InteractionMatrix::from_edges(n_users, n_items, test)?,
        user_ids,
        item_ids,
        adjusted_users,
    })
}

/// Removes items with no training interaction, along with their test
/// interactions. Such items would be isolated nodes of the training graph.
/// Surviving items keep their relative order. Returns the number dropped.
pub fn drop_cold_items(ds: &mut IndexedDataset) -> Result<usize> {
    let n_items = ds.n_items();
    let cold = (0..n_items)
        .filter(|&i| ds.train.item_degree(i) == 0)
        .count();
    if cold == 0 {
        return Ok(0);
    }
    let mut remap = vec![usize::MAX; n_items];
    let mut kept = Vec::with_capacity(n_items - cold);
    for (i, id) in ds.item_ids.iter().enumerate() {
        if ds.train.item_degree(i) > 0 {
            remap[i] = kept.len();
            kept.push(id.clone());
        }
    }
    let n_users = ds.n_users();
    let remapped = |m: &InteractionMatrix| -> Vec<(usize, usize)> {
        m.edges()
            .filter(|&(_, i)| remap[i] != usize::MAX)
            .map(|(u, i)| (u, remap[i]))
            .collect()
    };
    ds.train = InteractionMatrix::from_edges(n_users, kept.len(), remapped(&ds.train))?;
    ds.test = InteractionMatrix::from_edges(n_users, kept.len(), remapped(&ds.test))?;
    ds.item_ids = kept;
    Ok(cold)
}
