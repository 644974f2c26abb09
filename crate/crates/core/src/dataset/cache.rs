//! Line-oriented on-disk cache for [`IndexedDataset`].
//!
//! ```text
//! counterfair-dataset <version>
//! users <n>
//! <one id per line>
//! items <n>
//! <one id per line>
//! adjusted <n>
//! <one user index per line>
//! train <n_edges>
//! <u> <i>
//! test <n_edges>
//! <u> <i>
//! ```

use std::fs;
use std::path::Path;

use super::{IndexedDataset, InteractionMatrix};
use crate::error::{Error, IoContext, Result};

pub const CACHE_VERSION: u32 = 1;
const MAGIC: &str = "counterfair-dataset";

pub fn save_dataset(ds: &IndexedDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(&format!("{MAGIC} {CACHE_VERSION}\n"));
    out.push_str(&format!("users {}\n", ds.user_ids.len()));
    for id in &ds.user_ids {
        out.push_str(id);
        out.push('\n');
    }
    out.push_str(&format!("items {}\n", ds.item_ids.len()));
    for id in &ds.item_ids {
        out.push_str(id);
        out.push('\n');
    }
    out.push_str(&format!("adjusted {}\n", ds.adjusted_users.len()));
    for u in &ds.adjusted_users {
        out.push_str(&format!("{u}\n"));
    }
    for (name, m) in [("train", &ds.train), ("test", &ds.test)] {
        out.push_str(&format!("{name} {}\n", m.n_edges()));
        for (u, i) in m.edges() {
            out.push_str(&format!("{u} {i}\n"));
        }
    }
    fs::write(path, out).at(path)
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "dataset cache",
        detail: detail.into(),
    }
}

struct Lines<'a> {
    inner: std::str::Lines<'a>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        self.inner
            .next()
            .ok_or_else(|| bad("unexpected end of file"))
    }

    fn section(&mut self, name: &str) -> Result<usize> {
        let line = self.next()?;
        let (tag, n) = line
            .split_once(' ')
            .ok_or_else(|| bad(format!("expected `{name} <n>`")))?;
        if tag != name {
            return Err(bad(format!("expected section `{name}`, found `{tag}`")));
        }
        n.parse().map_err(|_| bad(format!("bad count in `{line}`")))
    }

    fn pair(&mut self) -> Result<(usize, usize)> {
        let line = self.next()?;
        let mut it = line.split(' ').map(str::parse::<usize>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(u)), Some(Ok(i)), None) => Ok((u, i)),
            _ => Err(bad(format!("bad edge line `{line}`"))),
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<IndexedDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).at(path)?;
    let mut lines = Lines {
        inner: text.lines(),
    };
    let header = lines.next()?;
    let version = header
        .strip_prefix(MAGIC)
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| bad("missing header"))?;
    if version != CACHE_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n_users = lines.section("users")?;
    let user_ids = (0..n_users)
        .map(|_| lines.next().map(str::to_owned))
        .collect::<Result<Vec<_>>>()?;
    let n_items = lines.section("items")?;
    let item_ids = (0..n_items)
        .map(|_| lines.next().map(str::to_owned))
        .collect::<Result<Vec<_>>>()?;
    let n_adj = lines.section("adjusted")?;
    let adjusted_users = (0..n_adj)
        .map(|_| lines.next()?.parse().map_err(|_| bad("bad adjusted user")))
        .collect::<Result<Vec<usize>>>()?;
    let mut read_matrix = |name: &str| -> Result<InteractionMatrix> {
        let n = lines.section(name)?;
        let edges = (0..n).map(|_| lines.pair()).collect::<Result<Vec<_>>>()?;
        InteractionMatrix::from_edges(n_users, n_items, edges)
    };
    let train = read_matrix("train")?;
    let test = read_matrix("test")?;
    Ok(IndexedDataset {
        user_ids,
        item_ids,
        train,
        test,
        adjusted_users,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let ds = IndexedDataset {
            user_ids: vec!["a".into(), "b c".into()],
            item_ids: vec!["x".into(), "y".into(), "z".into()],
            train: InteractionMatrix::from_edges(2, 3, [(0, 0), (1, 2)]).unwrap(),
            test: InteractionMatrix::from_edges(2, 3, [(0, 1), (1, 0)]).unwrap(),
            adjusted_users: vec![1],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ds.txt");
        save_dataset(&ds, &p).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), ds);
    }

    #[test]
    fn wrong_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ds.txt");
        fs::write(&p, "counterfair-dataset 99\n").unwrap();
        assert!(load_dataset(&p)
            .unwrap_err()
            .to_string()
            .contains("unsupported version"));
    }
}
