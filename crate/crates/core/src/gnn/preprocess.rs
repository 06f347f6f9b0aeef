//! Per-graph preprocessing: the chain of partitions, pooling operators and
//! renormalised adjacencies consumed by the model. Computed once per graph.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use ndarray::Array2;

use crate::coarsening::{cluster_count, coarsen, spectral_cluster, CoarsenedView, Partition, DEFAULT_POOLING_RATIO};
use crate::eigenpool::{build_bank, DEFAULT_POOL_H};
use crate::error::{Error, Result};
use crate::graph::{invert_permutation, permute, permute_rows, Graph};
use crate::spectral::{eig_sym, laplacian_dense};

use super::layers::renormalized_adjacency;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessConfig {
    pub levels: usize,
    pub pool_h: usize,
    pub pooling_ratio: usize,
    pub seed: u64,
    /// Cluster on a permutation-invariant node order (see
    /// [`canonical_order`]) so that relabelled inputs get the same subgraphs.
    pub canonical: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            pool_h: DEFAULT_POOL_H,
            pooling_ratio: DEFAULT_POOLING_RATIO,
            seed: 0,
            canonical: false,
        }
    }
}

/// One pooling level.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    /// Renormalised adjacency of this level's graph.
    pub adj_norm: Array2<f64>,
    pub view: CoarsenedView,
    /// `Θ_1 … Θ_H` (`n × K` each); operators past the largest subgraph are
    /// zero so the pooled width is always `d·H`.
    pub thetas: Vec<Array2<f64>>,
}

impl Level {
    pub fn n(&self) -> usize {
        self.adj_norm.nrows()
    }

    pub fn num_clusters(&self) -> usize {
        self.view.num_subgraphs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedGraph {
    pub levels: Vec<Level>,
}

impl PreprocessedGraph {
    pub fn final_nodes(&self) -> usize {
        self.levels.last().map_or(0, Level::num_clusters)
    }

    /// Smallest eigenvalue gap over every subgraph Laplacian at every level.
    pub fn min_spectral_gap(&self) -> Result<f64> {
        let mut gap = f64::INFINITY;
        for level in &self.levels {
            for a in &level.view.induced {
                if a.nrows() > 1 {
                    gap = gap.min(eig_sym(&laplacian_dense(&a.view()))?.min_gap());
                }
            }
        }
        Ok(gap)
    }
}

/// Partitions, coarsens and builds pooling operators level by level until a
/// single supernode remains. Level `i` uses `max(1, ceil(n_i / ratio))`
/// clusters except the last, which uses one.
pub fn preprocess(g: &Graph, cfg: &PreprocessConfig) -> Result<PreprocessedGraph> {
    if cfg.levels == 0 {
        return Err(Error::Config("at least one pooling level is required".into()));
    }
    if cfg.canonical {
        return preprocess_canonical(g, cfg);
    }
    if g.n() == 0 {
        return Err(Error::InvalidGraph("graph has no nodes".into()));
    }
    let mut current = Graph::structure_only(g.adjacency().clone());
    let mut levels = Vec::with_capacity(cfg.levels);
    for depth in 0..cfg.levels {
        let k = if depth + 1 == cfg.levels {
            1
        } else {
            cluster_count(current.n(), cfg.pooling_ratio)
        };
        let partition = spectral_cluster(&current, k, cfg.seed.wrapping_add(depth as u64))?;
        let view = coarsen(&current, &partition)?;
        let thetas = materialize(&view, cfg.pool_h)?;
        let next = view.coarse_graph()?;
        levels.push(Level {
            adj_norm: renormalized_adjacency(current.adjacency()),
            view,
            thetas,
        });
        current = next;
    }
    Ok(PreprocessedGraph { levels })
}

/// Single level without pooling, for the flat baseline.
pub fn preprocess_flat(g: &Graph) -> Result<PreprocessedGraph> {
    if g.n() == 0 {
        return Err(Error::InvalidGraph("graph has no nodes".into()));
    }
    let view = coarsen(g, &Partition::whole(g.n()))?;
    Ok(PreprocessedGraph {
        levels: vec![Level {
            adj_norm: renormalized_adjacency(g.adjacency()),
            view,
            thetas: Vec::new(),
        }],
    })
}

fn materialize(view: &CoarsenedView, h: usize) -> Result<Vec<Array2<f64>>> {
    let bank = build_bank(view, h)?;
    Ok((1..=h)
        .map(|l| {
            if l <= bank.n_max {
                bank.operator(l).expect("l within 1..=n_max")
            } else {
                Array2::zeros((bank.n(), bank.num_subgraphs()))
            }
        })
        .collect())
}

/// Node order that depends only on the graph up to isomorphism when the
/// refined colours are all distinct. Returns `p` with node `i` placed at
/// `p[i]`, and whether the order is unique.
///
/// Colours start from each node's feature row and neighbour count and are
/// refined by multisets of (neighbour colour, edge weight) pairs
/// (Weisfeiler-Lehman). Only exact bit patterns are hashed, never sums, so
/// the colours do not depend on the input order.
pub fn canonical_order(g: &Graph) -> (Vec<usize>, bool) {
    let n = g.n();
    let adj = g.adjacency();
    let mut colors: Vec<u64> = (0..n)
        .map(|i| {
            let mut h = DefaultHasher::new();
            for v in g.features().row(i) {
                v.to_bits().hash(&mut h);
            }
            adj.row(i).count().hash(&mut h);
            h.finish()
        })
        .collect();
    let distinct = |c: &[u64]| {
        let mut s = c.to_vec();
        s.sort_unstable();
        s.dedup();
        s.len()
    };
    let mut classes = distinct(&colors);
    for _ in 0..n {
        let next: Vec<u64> = (0..n)
            .map(|i| {
                let mut nb: Vec<(u64, u64)> = adj.row(i).map(|(j, w)| (colors[j], w.to_bits())).collect();
                nb.sort_unstable();
                let mut h = DefaultHasher::new();
                colors[i].hash(&mut h);
                nb.hash(&mut h);
                h.finish()
            })
            .collect();
        let c = distinct(&next);
        colors = next;
        if c == classes {
            break;
        }
        classes = c;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (colors[i], i));
    let mut p = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        p[i] = pos;
    }
    (p, classes == n)
}

fn preprocess_canonical(g: &Graph, cfg: &PreprocessConfig) -> Result<PreprocessedGraph> {
    let (p, _) = canonical_order(g);
    let canon = permute(g, &p)?;
    let mut pg = preprocess(&canon, &PreprocessConfig { canonical: false, ..*cfg })?;
    // only the first level refers to input nodes; deeper levels index supernodes
    let inv = invert_permutation(&p);
    let first = &mut pg.levels[0];
    let partition = first.view.partition.relabel_nodes(&inv);
    first.view = coarsen(g, &partition)?;
    first.adj_norm = renormalized_adjacency(g.adjacency());
    first.thetas = first.thetas.iter().map(|t| permute_rows(t, &inv)).collect();
    Ok(pg)
}
