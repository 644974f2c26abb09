//! Binary sparse user × item interaction matrix.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Binary user × item matrix with mutually consistent user-side and
/// item-side adjacency lists.
///
/// Both views are kept sorted, so iteration order (and everything derived
/// from it, e.g. edge-proportional sampling) is deterministic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionMatrix {
    n_users: usize,
    n_items: usize,
    user_items: Vec<Vec<u32>>,
    item_users: Vec<Vec<u32>>,
    n_edges: usize,
}

impl InteractionMatrix {
    pub fn empty(n_users: usize, n_items: usize) -> Self {
        Self {
            n_users,
            n_items,
            user_items: vec![Vec::new(); n_users],
            item_users: vec![Vec::new(); n_items],
            n_edges: 0,
        }
    }

    /// Builds a matrix from `(user, item)` pairs. Repeated pairs collapse.
    pub fn from_edges<I>(n_users: usize, n_items: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut sets: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n_users];
        for (u, i) in edges {
            if u >= n_users {
                return Err(Error::OutOfRange {
                    index: u,
                    len: n_users,
                });
            }
            if i >= n_items {
                return Err(Error::OutOfRange {
                    index: i,
                    len: n_items,
                });
            }
            sets[u].insert(i as u32);
        }
        let user_items: Vec<Vec<u32>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        Ok(Self::from_user_lists(n_items, user_items))
    }

    fn from_user_lists(n_items: usize, user_items: Vec<Vec<u32>>) -> Self {
        let mut item_users = vec![Vec::new(); n_items];
        let mut n_edges = 0;
        for (u, items) in user_items.iter().enumerate() {
            n_edges += items.len();
            for &i in items {
                item_users[i as usize].push(u as u32);
            }
        }
        Self {
            n_users: user_items.len(),
            n_items,
            user_items,
            item_users,
            n_edges,
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn is_empty(&self) -> bool {
        self.n_edges == 0
    }

    /// I(u), sorted ascending.
    pub fn user_items(&self, u: usize) -> &[u32] {
        &self.user_items[u]
    }

    /// U(i), sorted ascending.
    pub fn item_users(&self, i: usize) -> &[u32] {
        &self.item_users[i]
    }

    pub fn user_degree(&self, u: usize) -> usize {
        self.user_items[u].len()
    }

    pub fn item_degree(&self, i: usize) -> usize {
        self.item_users[i].len()
    }

    pub fn contains(&self, u: usize, i: usize) -> bool {
        u < self.n_users && self.user_items[u].binary_search(&(i as u32)).is_ok()
    }

    /// All edges in (user, item) lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.user_items
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u, i as usize)))
    }

    /// Returns a copy with the extra edges for `u` added.
    ///
    /// Every item must be new for `u`.
    pub fn with_user_items(&self, u: usize, items: &[usize]) -> Result<Self> {
        if u >= self.n_users {
            return Err(Error::OutOfRange {
                index: u,
                len: self.n_users,
            });
        }
        let mut out = self.clone();
        for &i in items {
            if i >= self.n_items {
                return Err(Error::OutOfRange {
                    index: i,
                    len: self.n_items,
                });
            }
            let row = &mut out.user_items[u];
            match row.binary_search(&(i as u32)) {
                Ok(_) => return Err(Error::DuplicateEdge { user: u, item: i }),
                Err(pos) => row.insert(pos, i as u32),
            }
            let col = &mut out.item_users[i];
            let pos = col.binary_search(&(u as u32)).unwrap_err();
            col.insert(pos, u as u32);
            out.n_edges += 1;
        }
        Ok(out)
    }

    /// Checks that the two adjacency views describe the same edge set.
    pub fn is_consistent(&self) -> bool {
        let from_items: usize = self.item_users.iter().map(Vec::len).sum();
        from_items == self.n_edges
            && self
                .user_items
                .iter()
                .all(|r| r.windows(2).all(|w| w[0] < w[1]))
            && self
                .item_users
                .iter()
                .all(|r| r.windows(2).all(|w| w[0] < w[1]))
            && self
                .edges()
                .all(|(u, i)| self.item_users[i].binary_search(&(u as u32)).is_ok())
    }
}
