//! Linear graph propagation over the symmetric-normalized user–item graph.
//!
//! Node ids: users occupy `0..n_users`, items `n_users..n_users + n_items`.

use crate::dataset::InteractionMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_EMBEDDING_DIM: usize = 64;
pub const DEFAULT_LAYERS: usize = 3;

/// Edge weight between a user of degree `du` and an item of degree `di`.
#[inline]
pub fn edge_weight(du: usize, di: usize) -> f64 {
    1.0 / ((du as f64) * (di as f64)).sqrt()
}

/// Sparse `D^{-1/2} A D^{-1/2}` of the bipartite interaction graph, in CSR
/// form with sorted columns. Each interaction appears twice (u→i, i→u)
/// with the same weight.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n_users: usize,
    n_items: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f64>,
    user_deg: Vec<usize>,
    item_deg: Vec<usize>,
}

pub fn build_adjacency(r: &InteractionMatrix) -> Result<NormalizedAdjacency> {
    if r.is_empty() {
        return Err(Error::InvalidArgument("empty interaction matrix".into()));
    }
    let (nu, ni) = (r.n_users(), r.n_items());
    let user_deg: Vec<usize> = (0..nu).map(|u| r.user_degree(u)).collect();
    let item_deg: Vec<usize> = (0..ni).map(|i| r.item_degree(i)).collect();
    if let Some(u) = user_deg.iter().position(|&d| d == 0) {
        return Err(Error::ZeroDegree(u));
    }
    if let Some(i) = item_deg.iter().position(|&d| d == 0) {
        return Err(Error::ZeroDegree(nu + i));
    }
    let mut row_ptr = Vec::with_capacity(nu + ni + 1);
    let mut cols = Vec::with_capacity(2 * r.n_edges());
    let mut weights = Vec::with_capacity(2 * r.n_edges());
    row_ptr.push(0);
    for (u, &du) in user_deg.iter().enumerate() {
        for &i in r.user_items(u) {
            cols.push((nu + i as usize) as u32);
            weights.push(edge_weight(du, item_deg[i as usize]));
        }
        row_ptr.push(cols.len());
    }
    for (i, &di) in item_deg.iter().enumerate() {
        for &u in r.item_users(i) {
            cols.push(u);
            weights.push(edge_weight(user_deg[u as usize], di));
        }
        row_ptr.push(cols.len());
    }
    Ok(NormalizedAdjacency {
        n_users: nu,
        n_items: ni,
        row_ptr,
        cols,
        weights,
        user_deg,
        item_deg,
    })
}

impl NormalizedAdjacency {
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    /// Number of stored directed entries (twice the interaction count).
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn user_degree(&self, u: usize) -> usize {
        self.user_deg[u]
    }

    pub fn item_degree(&self, i: usize) -> usize {
        self.item_deg[i]
    }

    /// `(neighbour node, weight)` pairs of a node.
    pub fn row(&self, node: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[node]..self.row_ptr[node + 1];
        self.cols[span.clone()]
            .iter()
            .zip(&self.weights[span])
            .map(|(&c, &w)| (c as usize, w))
    }

    /// Stored weight of the directed entry `a → b`, if any.
    pub fn weight(&self, a: usize, b: usize) -> Option<f64> {
        let span = self.row_ptr[a]..self.row_ptr[a + 1];
        self.cols[span.clone()]
            .binary_search(&(b as u32))
            .ok()
            .map(|k| self.weights[span.start + k])
    }

    /// A copy with edges `(user, i)` added for every `i` in `items`, with the
    /// weights of every entry incident to `user` or to one of the items
    /// recomputed from the new degrees. The result equals
    /// `build_adjacency` on the edited matrix.
    pub fn with_injected_edges(&self, user: usize, items: &[usize]) -> Result<NormalizedAdjacency> {
        if user >= self.n_users {
            return Err(Error::OutOfRange {
                index: user,
                len: self.n_users,
            });
        }
        if items.is_empty() {
            return Ok(self.clone());
        }
        let nu = self.n_users;
        let mut fresh: Vec<usize> = items.to_vec();
        fresh.sort_unstable();
        for w in fresh.windows(2) {
            if w[0] == w[1] {
                return Err(Error::InvalidArgument(format!(
                    "item {} injected twice",
                    w[0]
                )));
            }
        }
        for &i in &fresh {
            if i >= self.n_items {
                return Err(Error::OutOfRange {
                    index: i,
                    len: self.n_items,
                });
            }
            if self.weight(user, nu + i).is_some() {
                return Err(Error::DuplicateEdge { user, item: i });
            }
        }

        let mut user_deg = self.user_deg.clone();
        let mut item_deg = self.item_deg.clone();
        user_deg[user] += fresh.len();
        for &i in &fresh {
            item_deg[i] += 1;
        }

        // Splice new entries into the CSR arrays; weights fixed below.
        let n_nodes = self.n_nodes();
        let mut extra: Vec<Vec<u32>> = vec![Vec::new(); n_nodes];
        extra[user] = fresh.iter().map(|&i| (nu + i) as u32).collect();
        for &i in &fresh {
            extra[nu + i].push(user as u32);
        }
        let mut row_ptr = Vec::with_capacity(n_nodes + 1);
        let mut cols = Vec::with_capacity(self.nnz() + 2 * fresh.len());
        let mut weights = Vec::with_capacity(self.nnz() + 2 * fresh.len());
        row_ptr.push(0);
        for (node, added) in extra.iter().enumerate() {
            let span = self.row_ptr[node]..self.row_ptr[node + 1];
            if added.is_empty() {
                cols.extend_from_slice(&self.cols[span.clone()]);
                weights.extend_from_slice(&self.weights[span]);
            } else {
                let mut merged: Vec<u32> = self.cols[span].to_vec();
                merged.extend_from_slice(added);
                merged.sort_unstable();
                weights.extend(std::iter::repeat_n(f64::NAN, merged.len()));
                cols.extend(merged);
            }
            row_ptr.push(cols.len());
        }

        let mut out = NormalizedAdjacency {
            n_users: nu,
            n_items: self.n_items,
            row_ptr,
            cols,
            weights,
            user_deg,
            item_deg,
        };
        let mut touched: Vec<usize> = vec![user];
        touched.extend(fresh.iter().map(|&i| nu + i));
        for &node in &touched {
            let span = out.row_ptr[node]..out.row_ptr[node + 1];
            for k in span {
                let other = out.cols[k] as usize;
                let w = out.pair_weight(node, other);
                out.weights[k] = w;
                let back = out.row_ptr[other]
                    + out.cols[out.row_ptr[other]..out.row_ptr[other + 1]]
                        .binary_search(&(node as u32))
                        .expect("adjacency is symmetric");
                out.weights[back] = w;
            }
        }
        Ok(out)
    }

    fn pair_weight(&self, a: usize, b: usize) -> f64 {
        let (u, i) = if a < self.n_users {
            (a, b - self.n_users)
        } else {
            (b, a - self.n_users)
        };
        edge_weight(self.user_deg[u], self.item_deg[i])
    }

    /// `out = Â · x` for row-major `x` with `dim` columns.
    pub fn spmm(&self, x: &[f64], dim: usize, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_nodes() * dim);
        debug_assert_eq!(out.len(), x.len());
        for (node, out_row) in out.chunks_exact_mut(dim).enumerate() {
            out_row.fill(0.0);
            let span = self.row_ptr[node]..self.row_ptr[node + 1];
            for (&c, &w) in self.cols[span.clone()].iter().zip(&self.weights[span]) {
                let src = &x[c as usize * dim..(c as usize + 1) * dim];
                for (o, s) in out_row.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
    }
}

/// Node embedding matrix, users first, then items. Row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    n_users: usize,
    n_items: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(n_users: usize, n_items: usize, dim: usize) -> Self {
        Self::from_vec(n_users, n_items, dim, vec![0.0; (n_users + n_items) * dim])
            .expect("sizes agree")
    }

    pub fn from_vec(n_users: usize, n_items: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be positive".into(),
            ));
        }
        if data.len() != (n_users + n_items) * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} nodes × {dim}",
                data.len(),
                n_users + n_items
            )));
        }
        Ok(Self {
            n_users,
            n_items,
            dim,
            data,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn node(&self, n: usize) -> &[f64] {
        &self.data[n * self.dim..(n + 1) * self.dim]
    }

    pub fn node_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.data[n * self.dim..(n + 1) * self.dim]
    }

    pub fn user(&self, u: usize) -> &[f64] {
        self.node(u)
    }

    pub fn item(&self, i: usize) -> &[f64] {
        self.node(self.n_users + i)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn check_shape(&self, adj: &NormalizedAdjacency) -> Result<()> {
        if self.n_users != adj.n_users() || self.n_items != adj.n_items() {
            return Err(Error::ShapeMismatch(format!(
                "embeddings over {}+{} nodes, adjacency over {}+{}",
                self.n_users,
                self.n_items,
                adj.n_users(),
                adj.n_items()
            )));
        }
        Ok(())
    }
}

/// Layer weight `α_k = 1/(k+1)`.
#[inline]
pub fn layer_weight(k: usize) -> f64 {
    1.0 / (k as f64 + 1.0)
}

/// Embeddings of every propagation layer, `layers[0]` being the input.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    pub layers: Vec<EmbeddingTable>,
}

impl LayerStack {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn alphas(&self) -> Vec<f64> {
        (0..self.layers.len()).map(layer_weight).collect()
    }
}

/// Runs `layers` rounds of `e^{(k+1)} = Â e^{(k)}`.
pub fn propagate(
    e0: &EmbeddingTable,
    adj: &NormalizedAdjacency,
    layers: usize,
) -> Result<LayerStack> {
    e0.check_shape(adj)?;
    let mut stack = Vec::with_capacity(layers + 1);
    stack.push(e0.clone());
    for k in 0..layers {
        let prev = &stack[k];
        let mut next = EmbeddingTable::zeros(e0.n_users, e0.n_items, e0.dim);
        adj.spmm(&prev.data, e0.dim, &mut next.data);
        if !next.is_finite() {
            return Err(Error::NonFinite(format!("propagation layer {}", k + 1)));
        }
        stack.push(next);
    }
    Ok(LayerStack { layers: stack })
}

/// `Σ_k α_k e^{(k)}`.
pub fn aggregate(stack: &LayerStack) -> Result<EmbeddingTable> {
    let first = stack
        .layers
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty layer stack".into()))?;
    let mut out = EmbeddingTable::zeros(first.n_users, first.n_items, first.dim);
    for (k, layer) in stack.layers.iter().enumerate() {
        let a = layer_weight(k);
        for (o, v) in out.data.iter_mut().zip(&layer.data) {
            *o += a * v;
        }
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("aggregated embeddings".into()));
    }
    Ok(out)
}

/// Applies `M = Σ_{k=0..layers} α_k Â^k` without keeping the stack around.
///
/// `M` is symmetric, so the same call maps gradients w.r.t. the aggregated
/// embeddings back onto layer 0.
pub fn smooth(
    x: &EmbeddingTable,
    adj: &NormalizedAdjacency,
    layers: usize,
) -> Result<EmbeddingTable> {
    x.check_shape(adj)?;
    let dim = x.dim;
    let mut out = x.clone();
    let mut cur = x.data.clone();
    let mut next = vec![0.0; cur.len()];
    for k in 1..=layers {
        adj.spmm(&cur, dim, &mut next);
        let a = layer_weight(k);
        for (o, v) in out.data.iter_mut().zip(&next) {
            *o += a * v;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("propagated embeddings".into()));
    }
    Ok(out)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `p_ui = e_u · e_i` for every item.
pub fn predict_scores(e: &EmbeddingTable, u: usize) -> Vec<f64> {
    let eu = e.user(u);
    (0..e.n_items).map(|i| dot(eu, e.item(i))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(nu: usize, ni: usize, edges: &[(usize, usize)]) -> InteractionMatrix {
        InteractionMatrix::from_edges(nu, ni, edges.iter().copied()).unwrap()
    }

    #[test]
    fn single_edge_has_unit_weight() {
        let a = build_adjacency(&matrix(1, 1, &[(0, 0)])).unwrap();
        assert_eq!(a.weight(0, 1), Some(1.0));
        assert_eq!(a.weight(1, 0), Some(1.0));
    }

    #[test]
    fn star_user_weights() {
        let a = build_adjacency(&matrix(1, 4, &[(0, 0), (0, 1), (0, 2), (0, 3)])).unwrap();
        for i in 0..4 {
            assert_eq!(a.weight(0, 1 + i), Some(0.5));
        }
    }

    #[test]
    fn zero_degree_rejected() {
        let err = build_adjacency(&matrix(2, 2, &[(0, 0)])).unwrap_err();
        assert!(matches!(err, Error::ZeroDegree(1)));
    }

    #[test]
    fn inject_nothing_is_identity() {
        let a = build_adjacency(&matrix(2, 2, &[(0, 0), (1, 1)])).unwrap();
        assert_eq!(a.with_injected_edges(0, &[]).unwrap(), a);
    }

    #[test]
    fn inject_existing_item_fails() {
        let a = build_adjacency(&matrix(2, 2, &[(0, 0), (1, 1)])).unwrap();
        assert!(matches!(
            a.with_injected_edges(0, &[0]),
            Err(Error::DuplicateEdge { .. })
        ));
    }

    #[test]
    fn inject_into_degree_nine_user() {
        let mut edges: Vec<(usize, usize)> = (0..9).map(|i| (0, i)).collect();
        edges.push((1, 9));
        let r = matrix(2, 10, &edges);
        let a = build_adjacency(&r)
            .unwrap()
            .with_injected_edges(0, &[9])
            .unwrap();
        assert_eq!(a.user_degree(0), 10);
        for i in 0..9 {
            assert_eq!(a.weight(0, 2 + i), Some(1.0 / 10f64.sqrt()));
        }
        assert_eq!(a.weight(0, 11), Some(1.0 / 20f64.sqrt()));
        let rebuilt = build_adjacency(&r.with_user_items(0, &[9]).unwrap()).unwrap();
        assert_eq!(a, rebuilt);
    }

    #[test]
    fn two_node_propagation() {
        let a = build_adjacency(&matrix(1, 1, &[(0, 0)])).unwrap();
        let e0 = EmbeddingTable::from_vec(1, 1, 1, vec![2.0, 3.0]).unwrap();
        let stack = propagate(&e0, &a, 1).unwrap();
        assert_eq!(stack.layers[1].as_slice(), &[3.0, 2.0]);
        assert_eq!(propagate(&e0, &a, 0).unwrap().layers, vec![e0]);
    }

    #[test]
    fn aggregate_weights() {
        let l0 = EmbeddingTable::from_vec(1, 1, 1, vec![1.0, 2.0]).unwrap();
        let l1 = EmbeddingTable::from_vec(1, 1, 1, vec![4.0, 6.0]).unwrap();
        let only = aggregate(&LayerStack {
            layers: vec![l0.clone()],
        })
        .unwrap();
        assert_eq!(only, l0);
        let both = aggregate(&LayerStack {
            layers: vec![l0, l1],
        })
        .unwrap();
        assert_eq!(both.as_slice(), &[3.0, 5.0]);
        assert!(aggregate(&LayerStack { layers: vec![] }).is_err());
    }

    #[test]
    fn alphas_decrease() {
        let l = EmbeddingTable::zeros(1, 1, 1);
        let a = LayerStack { layers: vec![l; 4] }.alphas();
        assert_eq!(a[0], 1.0);
        assert!(a.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn smooth_equals_propagate_then_aggregate() {
        let r = matrix(3, 3, &[(0, 0), (0, 1), (1, 1), (2, 2), (1, 2)]);
        let a = build_adjacency(&r).unwrap();
        let e0 = EmbeddingTable::from_vec(3, 3, 2, (0..12).map(|v| v as f64 * 0.3 - 1.0).collect())
            .unwrap();
        let via_stack = aggregate(&propagate(&e0, &a, 3).unwrap()).unwrap();
        let direct = smooth(&e0, &a, 3).unwrap();
        for (x, y) in via_stack.as_slice().iter().zip(direct.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn scores() {
        let e = EmbeddingTable::from_vec(1, 2, 2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 3.0]).unwrap();
        assert_eq!(predict_scores(&e, 0), vec![1.0, 0.0]);
        let z = EmbeddingTable::zeros(1, 3, 4);
        assert_eq!(predict_scores(&z, 0), vec![0.0; 3]);
    }

    #[test]
    fn shape_mismatch() {
        let a = build_adjacency(&matrix(1, 1, &[(0, 0)])).unwrap();
        let e = EmbeddingTable::zeros(2, 1, 1);
        assert!(propagate(&e, &a, 1).is_err());
        assert!(EmbeddingTable::from_vec(1, 1, 0, vec![]).is_err());
    }
}
