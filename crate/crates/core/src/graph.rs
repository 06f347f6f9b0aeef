//! Undirected weighted graphs with dense node features.
//!
//! Adjacency is kept in compressed-row form with both directions of every
//! edge stored, so it is symmetric by construction. Self-loops are never
//! stored; the GCN renormalisation adds them on the fly.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};

use crate::error::{shape_err, Error, Result};

/// Column-wise collection of one-dimensional signals on the nodes of a graph
/// (one row per node).
pub type GraphSignal = Array2<f64>;

/// Symmetric nonnegative adjacency in compressed-row layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAdjacency {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseAdjacency {
    /// Graph on `n` nodes without edges.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            row_ptr: vec![0; n + 1],
            cols: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Builds a symmetric adjacency from undirected edges.
    ///
    /// Each pair may be listed in either or both directions; the first weight
    /// seen for a pair is kept. Self-loops, negative or non-finite weights and
    /// out-of-range endpoints are rejected.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut pairs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop on node {i}")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i}, {j}) has invalid weight {w}"
                )));
            }
            pairs.entry((i.min(j), i.max(j))).or_insert(w);
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (&(i, j), &w) in &pairs {
            if w == 0.0 {
                continue;
            }
            rows[i].push((j, w));
            rows[j].push((i, w));
        }
        Ok(Self::from_rows(n, rows))
    }

    /// Builds from a dense matrix, keeping strictly positive off-diagonal
    /// entries. The matrix must be symmetric and nonnegative.
    pub fn from_dense(a: &Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(shape_err(format!("{n}x{n}"), format!("{n}x{}", a.ncols())));
        }
        let mut rows = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                let w = a[[i, j]];
                if w != a[[j, i]] {
                    return Err(Error::NotSymmetric((w - a[[j, i]]).abs()));
                }
                if !(w.is_finite() && w >= 0.0) {
                    return Err(Error::InvalidGraph(format!("entry ({i}, {j}) = {w}")));
                }
                if i != j && w > 0.0 {
                    rows[i].push((j, w));
                }
            }
        }
        Ok(Self::from_rows(n, rows))
    }

    fn from_rows(n: usize, mut rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_by_key(|&(j, _)| j);
            for &(j, w) in row.iter() {
                cols.push(j);
                weights.push(w);
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            weights,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored (directed) entries, i.e. twice the edge count.
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn num_edges(&self) -> usize {
        self.nnz() / 2
    }

    /// Neighbours of `i` with their edge weights, ascending by neighbour.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b]
            .iter()
            .copied()
            .zip(self.weights[a..b].iter().copied())
    }

    /// All stored entries `(i, j, w)` in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, w)| (i, j, w)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.cols[a..b].binary_search(&j) {
            Ok(pos) => self.weights[a + pos],
            Err(_) => 0.0,
        }
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.row(i).map(|(_, w)| w).sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for (i, j, w) in self.entries() {
            a[[i, j]] = w;
        }
        a
    }

    /// Keeps the entries for which `keep(i, j)` holds. `keep` must be
    /// symmetric in its arguments for the result to stay symmetric.
    pub fn filter<F: Fn(usize, usize) -> bool>(&self, keep: F) -> Self {
        let rows = (0..self.n)
            .map(|i| self.row(i).filter(|&(j, _)| keep(i, j)).collect())
            .collect();
        Self::from_rows(self.n, rows)
    }

    /// Dense adjacency of the subgraph induced on `nodes`, in list order.
    pub fn induced_dense(&self, nodes: &[usize]) -> Array2<f64> {
        let m = nodes.len();
        let mut local = vec![usize::MAX; self.n];
        for (pos, &v) in nodes.iter().enumerate() {
            local[v] = pos;
        }
        let mut a = Array2::zeros((m, m));
        for (pos, &v) in nodes.iter().enumerate() {
            for (j, w) in self.row(v) {
                if local[j] != usize::MAX {
                    a[[pos, local[j]]] = w;
                }
            }
        }
        a
    }

    /// Relabels node `i` as `p[i]`. `p` must be a bijection (checked by the
    /// caller).
    fn relabel(&self, p: &[usize]) -> Self {
        let mut rows = vec![Vec::new(); self.n];
        for (i, j, w) in self.entries() {
            rows[p[i]].push((p[j], w));
        }
        Self::from_rows(self.n, rows)
    }

    /// Connected-component label of every node; labels are numbered in
    /// order of each component's smallest node.
    pub fn components(&self) -> Vec<usize> {
        components_where(self, |_, _| true)
    }
}

/// Component labels of the graph restricted to edges accepted by `keep`.
pub(crate) fn components_where<F: Fn(usize, usize) -> bool>(
    adj: &SparseAdjacency,
    keep: F,
) -> Vec<usize> {
    let n = adj.n();
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        label[start] = next;
        stack.push(start);
        while let Some(v) = stack.pop() {
            for (u, _) in adj.row(v) {
                if label[u] == usize::MAX && keep(v, u) {
                    label[u] = next;
                    stack.push(u);
                }
            }
        }
        next += 1;
    }
    label
}

/// An undirected weighted graph with a dense node-feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: SparseAdjacency,
    features: Array2<f64>,
    label: Option<usize>,
}

impl Graph {
    pub fn new(
        adjacency: SparseAdjacency,
        features: Array2<f64>,
        label: Option<usize>,
    ) -> Result<Self> {
        if features.nrows() != adjacency.n() {
            return Err(shape_err(
                format!("{} feature rows", adjacency.n()),
                format!("{} feature rows", features.nrows()),
            ));
        }
        Ok(Self {
            adjacency,
            features,
            label,
        })
    }

    /// Graph with no node features (zero feature columns).
    pub fn structure_only(adjacency: SparseAdjacency) -> Self {
        let n = adjacency.n();
        Self {
            adjacency,
            features: Array2::zeros((n, 0)),
            label: None,
        }
    }

    /// Unit-weight graph from an edge list.
    pub fn from_unit_edges(n: usize, edges: &[(usize, usize)], features: Array2<f64>) -> Result<Self> {
        let adj = SparseAdjacency::from_edges(n, edges.iter().map(|&(i, j)| (i, j, 1.0)))?;
        Self::new(adj, features, None)
    }

    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn adjacency(&self) -> &SparseAdjacency {
        &self.adjacency
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    pub fn with_features(self, features: Array2<f64>) -> Result<Self> {
        Self::new(self.adjacency, features, self.label)
    }
}

/// Weighted degree of every node.
pub fn degree_matrix(g: &Graph) -> Array1<f64> {
    (0..g.n()).map(|i| g.adjacency().degree(i)).collect()
}

/// Checks that `p` is a bijection on `0..n`.
pub fn check_permutation(p: &[usize], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::InvalidPermutation(format!(
            "length {} for {n} nodes",
            p.len()
        )));
    }
    let mut seen = vec![false; n];
    for &v in p {
        if v >= n || std::mem::replace(&mut seen[v], true) {
            return Err(Error::InvalidPermutation(format!("{v} repeated or out of range")));
        }
    }
    Ok(())
}

pub fn invert_permutation(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &v) in p.iter().enumerate() {
        inv[v] = i;
    }
    inv
}

/// Applies the permutation matrix `P` with `P[p[i], i] = 1`: node `i` moves
/// to position `p[i]`, so the result has adjacency `P A Pᵀ` and features
/// `P X`. Composition follows `permute(permute(g, p), q) = permute(g, q∘p)`.
pub fn permute(g: &Graph, p: &[usize]) -> Result<Graph> {
    check_permutation(p, g.n())?;
    let mut features = Array2::zeros(g.features.raw_dim());
    for (i, row) in g.features.axis_iter(Axis(0)).enumerate() {
        features.row_mut(p[i]).assign(&row);
    }
    Ok(Graph {
        adjacency: g.adjacency.relabel(p),
        features,
        label: g.label,
    })
}

/// Row-permutes a signal with the same convention as [`permute`].
pub fn permute_rows(x: &Array2<f64>, p: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        out.row_mut(p[i]).assign(&row);
    }
    out
}
