//! Partitioning a graph into connected subgraphs and the coarsening
//! operators built on top of a partition.
//!
//! Clustering follows the usual normalised-cut recipe: embed the non-isolated
//! nodes with the eigenvectors of the `k` smallest eigenvalues of
//! `I - D^{-1/2} A D^{-1/2}`, row-normalise, and run seeded k-means. Clusters
//! that induce disconnected subgraphs are then split into components, and
//! surplus pieces are merged back until at most `k` remain.

mod kmeans;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::graph::{components_where, Graph, SparseAdjacency};
use crate::spectral::{eig_sym, normalized_laplacian_dense};

/// Default ratio between a level's node count and its cluster count.
pub const DEFAULT_POOLING_RATIO: usize = 4;

/// Assignment of every node to one of `K` subgraphs.
///
/// Every node list is sorted ascending. Partitions built from labels number
/// their subgraphs by smallest node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
    node_lists: Vec<Vec<usize>>,
}

impl Partition {
    /// Builds a partition from arbitrary per-node labels; equal labels mean
    /// the same subgraph.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let mut node_lists: Vec<Vec<usize>> = Vec::new();
        let assignment = labels
            .iter()
            .enumerate()
            .map(|(v, l)| {
                let id = *remap.entry(*l).or_insert_with(|| {
                    node_lists.push(Vec::new());
                    node_lists.len() - 1
                });
                node_lists[id].push(v);
                id
            })
            .collect();
        Self {
            assignment,
            node_lists,
        }
    }

    pub fn singletons(n: usize) -> Self {
        Self::from_labels(&(0..n).collect::<Vec<_>>())
    }

    pub fn whole(n: usize) -> Self {
        Self::from_labels(&vec![0; n])
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn num_subgraphs(&self) -> usize {
        self.node_lists.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn node_lists(&self) -> &[Vec<usize>] {
        &self.node_lists
    }

    pub fn node_list(&self, k: usize) -> &[usize] {
        &self.node_lists[k]
    }

    /// Size of the largest subgraph.
    pub fn n_max(&self) -> usize {
        self.node_lists.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Whether every subgraph induces a connected subgraph of `adj`.
    pub fn is_connected_in(&self, adj: &SparseAdjacency) -> bool {
        let comps = components_where(adj, |i, j| self.assignment[i] == self.assignment[j]);
        self.node_lists
            .iter()
            .all(|nodes| nodes.iter().all(|&v| comps[v] == comps[nodes[0]]))
    }

    /// Moves node `i` to position `p[i]`, keeping subgraph ids. Node lists
    /// stay sorted; ids are no longer ordered by smallest node in general.
    pub fn relabel_nodes(&self, p: &[usize]) -> Self {
        let mut assignment = vec![0; self.n()];
        for (i, &k) in self.assignment.iter().enumerate() {
            assignment[p[i]] = k;
        }
        let mut node_lists = vec![Vec::new(); self.num_subgraphs()];
        for (v, &k) in assignment.iter().enumerate() {
            node_lists[k].push(v);
        }
        Self {
            assignment,
            node_lists,
        }
    }
}

/// Cluster count for a level with `n` nodes: `max(1, ceil(n / ratio))`.
pub fn cluster_count(n: usize, ratio: usize) -> usize {
    n.div_ceil(ratio.max(1)).max(1)
}

/// Spectral clustering into at most `k` connected subgraphs, deterministic
/// given `seed`.
pub fn spectral_cluster(g: &Graph, k: usize, seed: u64) -> Result<Partition> {
    if k < 1 {
        return Err(Error::InvalidClusterCount(k));
    }
    let n = g.n();
    if n == 0 {
        return Err(Error::InvalidGraph("graph has no nodes".into()));
    }
    if k >= n {
        return Ok(Partition::singletons(n));
    }
    if k == 1 {
        return Ok(Partition::whole(n));
    }
    let adj = g.adjacency();

    // isolated nodes are singleton clusters up front
    let (isolated, active): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&v| adj.row(v).next().is_none());
    let mut cluster = vec![0usize; n];
    for (c, &v) in isolated.iter().enumerate() {
        cluster[v] = c;
    }
    let base = isolated.len();
    if !active.is_empty() {
        let k_rest = k.saturating_sub(isolated.len()).max(1);
        if k_rest >= active.len() {
            for (c, &v) in active.iter().enumerate() {
                cluster[v] = base + c;
            }
        } else {
            let labels = embed_and_cluster(&adj.induced_dense(&active), k_rest, seed)?;
            for (&v, l) in active.iter().zip(labels) {
                cluster[v] = base + l;
            }
        }
    }

    let pieces = components_where(adj, |i, j| cluster[i] == cluster[j]);
    let merged = merge_surplus(adj, pieces, k);
    Ok(Partition::from_labels(&merged))
}

fn embed_and_cluster(a: &Array2<f64>, k: usize, seed: u64) -> Result<Vec<usize>> {
    let basis = eig_sym(&normalized_laplacian_dense(a))?;
    let mut emb = basis
        .eigenvectors
        .slice(ndarray::s![.., ..k])
        .to_owned();
    for mut row in emb.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    Ok(kmeans::kmeans(emb.view(), k, seed).labels)
}

/// Merges the smallest piece into its most strongly connected neighbour
/// until at most `k` pieces remain. Ties go to the lower piece id; a piece
/// with no neighbour is merged into the lowest-id other piece.
fn merge_surplus(adj: &SparseAdjacency, mut piece: Vec<usize>, k: usize) -> Vec<usize> {
    loop {
        let p = Partition::from_labels(&piece);
        let count = p.num_subgraphs();
        if count <= k {
            return p.assignment().to_vec();
        }
        let ids = p.assignment();
        let smallest = (0..count)
            .min_by_key(|&c| (p.node_list(c).len(), c))
            .expect("nonempty");
        let mut link = vec![0.0f64; count];
        for &v in p.node_list(smallest) {
            for (u, w) in adj.row(v) {
                if ids[u] != smallest {
                    link[ids[u]] += w;
                }
            }
        }
        let mut target = None;
        for (c, &w) in link.iter().enumerate() {
            if w > 0.0 && target.is_none_or(|(_, best)| w > best) {
                target = Some((c, w));
            }
        }
        let target = target
            .map(|(c, _)| c)
            .unwrap_or_else(|| (0..count).find(|&c| c != smallest).expect("two pieces"));
        piece = ids
            .iter()
            .map(|&c| if c == smallest { target } else { c })
            .collect();
    }
}

/// `n × N_k` binary matrix with `C[i, j] = 1` iff the `j`-th node of
/// subgraph `k` is node `i`.
pub fn sampling_operator(p: &Partition, k: usize) -> Result<Array2<f64>> {
    if k >= p.num_subgraphs() {
        return Err(Error::InvalidPartition(format!(
            "subgraph {k} of {}",
            p.num_subgraphs()
        )));
    }
    let nodes = p.node_list(k);
    let mut c = Array2::zeros((p.n(), nodes.len()));
    for (j, &v) in nodes.iter().enumerate() {
        c[[v, j]] = 1.0;
    }
    Ok(c)
}

/// `n × K` node-to-subgraph membership matrix.
pub fn assignment_matrix(p: &Partition) -> Array2<f64> {
    let mut s = Array2::zeros((p.n(), p.num_subgraphs()));
    for (v, &k) in p.assignment().iter().enumerate() {
        s[[v, k]] = 1.0;
    }
    s
}

/// A graph split along a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarsenedView {
    pub partition: Partition,
    /// Edges inside subgraphs.
    pub a_int: SparseAdjacency,
    /// Edges between subgraphs.
    pub a_ext: SparseAdjacency,
    /// `Sᵀ A_ext S`, the supernode adjacency.
    pub a_coar: Array2<f64>,
    /// Induced adjacency of each subgraph, rows in node-list order.
    pub induced: Vec<Array2<f64>>,
}

impl CoarsenedView {
    pub fn num_subgraphs(&self) -> usize {
        self.partition.num_subgraphs()
    }

    /// The coarsened graph (supernodes only, no features).
    pub fn coarse_graph(&self) -> Result<Graph> {
        Ok(Graph::structure_only(SparseAdjacency::from_dense(&self.a_coar)?))
    }
}

pub fn coarsen(g: &Graph, p: &Partition) -> Result<CoarsenedView> {
    if p.n() != g.n() {
        return Err(Error::InvalidPartition(format!(
            "partition covers {} nodes, graph has {}",
            p.n(),
            g.n()
        )));
    }
    let adj = g.adjacency();
    let ids = p.assignment();
    let a_int = adj.filter(|i, j| ids[i] == ids[j]);
    let a_ext = adj.filter(|i, j| ids[i] != ids[j]);
    let k = p.num_subgraphs();
    let mut a_coar = Array2::zeros((k, k));
    // accumulate one direction only so the result is exactly symmetric
    for (i, j, w) in a_ext.entries() {
        if ids[i] < ids[j] {
            a_coar[[ids[i], ids[j]]] += w;
        }
    }
    for a in 0..k {
        for b in a + 1..k {
            a_coar[[b, a]] = a_coar[[a, b]];
        }
    }
    let induced = p.node_lists().iter().map(|nodes| adj.induced_dense(nodes)).collect();
    Ok(CoarsenedView {
        partition: p.clone(),
        a_int,
        a_ext,
        a_coar,
        induced,
    })
}
