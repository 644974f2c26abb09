mod common;

use std::time::Instant;

use common::ml100k_path;
use counterfair::dataset::*;

#[test]
fn raw_file_statistics() {
    let log = load_movielens(ml100k_path(), MovieLensFormat::Tab).unwrap();
    assert_eq!(log.len(), 100_000);
    assert_eq!(log.skipped_rows, 0);
    let s = log.stats();
    assert_eq!((s.users, s.items, s.ratings), (943, 1682, 100_000));
}

#[test]
fn ten_core_statistics() {
    let start = Instant::now();
    let log = load_movielens(ml100k_path(), MovieLensFormat::Tab).unwrap();
    let core = kcore_filter(&log, 10).unwrap();
    let s = core.stats();
    assert_eq!((s.users, s.items, s.ratings), (943, 1152, 97_953));
    assert!(start.elapsed().as_secs_f64() < 10.0);
    // filtering a core again is a no-op
    assert_eq!(kcore_filter(&core, 10).unwrap().stats(), s);
}

#[test]
fn temporal_split_invariants() {
    let log = load_movielens(ml100k_path(), MovieLensFormat::Tab).unwrap();
    let core = kcore_filter(&log, 10).unwrap();
    let data = temporal_split(&core, 0.8).unwrap();
    assert_eq!(data.n_users(), 943);
    assert_eq!(data.n_items(), 1152);
    assert_eq!(data.train.n_edges() + data.test.n_edges(), 97_953);
    assert!(data.train.is_consistent() && data.test.is_consistent());

    let ts: std::collections::HashMap<(String, String), i64> = core
        .records
        .iter()
        .map(|r| ((r.user.clone(), r.item.clone()), r.timestamp))
        .collect();
    let uid = |u: usize| data.user_ids[u].clone();
    let iid = |i: usize| data.item_ids[i].clone();
    for u in 0..data.n_users() {
        let tr = data.train.user_items(u);
        let te = data.test.user_items(u);
        let n = tr.len() + te.len();
        assert_eq!(tr.len(), train_count(n, 0.8), "user {u}");
        assert!(!te.is_empty());
        assert!(tr.iter().all(|i| !te.contains(i)));
        let last_train = tr
            .iter()
            .map(|&i| ts[&(uid(u), iid(i as usize))])
            .max()
            .unwrap();
        let first_test = te
            .iter()
            .map(|&i| ts[&(uid(u), iid(i as usize))])
            .min()
            .unwrap();
        assert!(
            last_train <= first_test,
            "user {u} leaks future interactions"
        );
    }
}

#[test]
fn preprocessing_is_deterministic() {
    let run = || {
        let log = load_movielens(ml100k_path(), MovieLensFormat::Tab).unwrap();
        temporal_split(&kcore_filter(&log, 10).unwrap(), 0.8).unwrap()
    };
    assert_eq!(run(), run());
}
