//! Loader for graph-classification corpora in the TUDataset flat-file layout.
//!
//! A dataset `NAME` is a directory holding
//!
//! ```text
//! NAME_A.txt               "i, j" per line, 1-based global node ids
//! NAME_graph_indicator.txt graph id (1-based) of every node
//! NAME_graph_labels.txt    class label of every graph
//! NAME_node_labels.txt     optional categorical node label
//! NAME_node_attributes.txt optional comma-separated real attributes
//! ```
//!
//! Node features are `[one-hot(node label) | attributes]`; graph labels are
//! remapped to `0..num_classes` in ascending order of the raw values.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, SparseAdjacency};

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    pub feature_dim: usize,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn mean_nodes(&self) -> f64 {
        let total: usize = self.graphs.iter().map(Graph::n).sum();
        total as f64 / self.graphs.len().max(1) as f64
    }

    pub fn max_nodes(&self) -> usize {
        self.graphs.iter().map(Graph::n).max().unwrap_or(0)
    }
}

/// Disjoint train/validation/test index lists into a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

struct Lines {
    path: PathBuf,
    text: String,
}

impl Lines {
    fn read(path: PathBuf) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path));
        }
        let text = fs::read_to_string(&path)?;
        Ok(Self { path, text })
    }

    fn read_optional(path: PathBuf) -> Result<Option<Self>> {
        if path.is_file() {
            Self::read(path).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Non-blank lines with their 1-based line numbers.
    fn entries(&self) -> impl Iterator<Item = (usize, &str)> {
        self.text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            file: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    fn parse<T: FromStr>(&self, line: usize, field: &str, what: &str) -> Result<T> {
        field
            .trim()
            .parse()
            .map_err(|_| self.err(line, format!("expected {what}, found {:?}", field.trim())))
    }
}

fn file(dir: &Path, name: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{name}_{suffix}.txt"))
}

/// Directory holding `NAME_*.txt`: `root/NAME` when present, else `root`.
pub fn resolve_dataset_dir(root: &Path, name: &str) -> PathBuf {
    let nested = root.join(name);
    if file(&nested, name, "A").is_file() {
        nested
    } else {
        root.to_path_buf()
    }
}

pub fn load_tudataset(dir: &Path, name: &str) -> Result<Corpus> {
    let edges = Lines::read(file(dir, name, "A"))?;
    let indicator = Lines::read(file(dir, name, "graph_indicator"))?;
    let graph_labels = Lines::read(file(dir, name, "graph_labels"))?;
    let node_labels = Lines::read_optional(file(dir, name, "node_labels"))?;
    let node_attrs = Lines::read_optional(file(dir, name, "node_attributes"))?;
    if node_labels.is_none() && node_attrs.is_none() {
        return Err(Error::MissingFile(file(dir, name, "node_labels")));
    }

    let mut raw_labels = Vec::new();
    for (line, l) in graph_labels.entries() {
        raw_labels.push(graph_labels.parse::<i64>(line, l, "an integer graph label")?);
    }
    let num_graphs = raw_labels.len();

    // node -> (graph, local index)
    let mut owner = Vec::new();
    let mut sizes = vec![0usize; num_graphs];
    for (line, l) in indicator.entries() {
        let gid: usize = indicator.parse(line, l, "an integer graph id")?;
        if gid == 0 || gid > num_graphs {
            return Err(indicator.err(line, format!("graph id {gid} outside 1..={num_graphs}")));
        }
        owner.push((gid - 1, sizes[gid - 1]));
        sizes[gid - 1] += 1;
    }
    let num_nodes = owner.len();
    if let Some(g) = sizes.iter().position(|&s| s == 0) {
        return Err(indicator.err(0, format!("graph {} has no nodes", g + 1)));
    }

    let mut graph_edges: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); num_graphs];
    for (line, l) in edges.entries() {
        let mut parts = l.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(edges.err(line, format!("expected \"i, j\", found {l:?}")));
        };
        let i: usize = edges.parse(line, a, "an integer node id")?;
        let j: usize = edges.parse(line, b, "an integer node id")?;
        for v in [i, j] {
            if v == 0 || v > num_nodes {
                return Err(edges.err(
                    line,
                    format!("dangling edge endpoint {v} (nodes are 1..={num_nodes})"),
                ));
            }
        }
        let ((gi, li), (gj, lj)) = (owner[i - 1], owner[j - 1]);
        if gi != gj {
            return Err(edges.err(line, format!("edge joins graphs {} and {}", gi + 1, gj + 1)));
        }
        // self-loops are added by the convolution itself, never stored
        if li != lj {
            graph_edges[gi].push((li, lj, 1.0));
        }
    }

    let mut label_values = Vec::new();
    if let Some(nl) = &node_labels {
        for (line, l) in nl.entries() {
            label_values.push(nl.parse::<i64>(line, l, "an integer node label")?);
        }
        if label_values.len() != num_nodes {
            return Err(nl.err(
                label_values.len(),
                format!("{} node labels for {num_nodes} nodes", label_values.len()),
            ));
        }
    }
    let label_index: BTreeMap<i64, usize> = label_values
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, i))
        .collect();
    let one_hot = label_index.len();

    let mut attrs: Vec<Vec<f64>> = Vec::new();
    if let Some(na) = &node_attrs {
        for (line, l) in na.entries() {
            let row = l
                .split(',')
                .map(|f| na.parse::<f64>(line, f, "a real attribute"))
                .collect::<Result<Vec<_>>>()?;
            if let Some(first) = attrs.first() {
                if first.len() != row.len() {
                    return Err(na.err(line, format!("{} attributes, expected {}", row.len(), first.len())));
                }
            }
            attrs.push(row);
        }
        if attrs.len() != num_nodes {
            return Err(na.err(attrs.len(), format!("{} attribute rows for {num_nodes} nodes", attrs.len())));
        }
    }
    let attr_dim = attrs.first().map_or(0, Vec::len);
    let feature_dim = one_hot + attr_dim;

    let class_index: BTreeMap<i64, usize> = raw_labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, i))
        .collect();

    let mut features: Vec<Array2<f64>> = sizes.iter().map(|&s| Array2::zeros((s, feature_dim))).collect();
    for (v, &(g, local)) in owner.iter().enumerate() {
        let mut row = features[g].row_mut(local);
        if let Some(&lv) = label_values.get(v) {
            row[label_index[&lv]] = 1.0;
        }
        if let Some(a) = attrs.get(v) {
            for (c, x) in a.iter().enumerate() {
                row[one_hot + c] = *x;
            }
        }
    }

    let graphs = graph_edges
        .into_iter()
        .zip(features)
        .zip(&raw_labels)
        .map(|((e, x), raw)| {
            let n = x.nrows();
            Graph::new(SparseAdjacency::from_edges(n, e)?, x, Some(class_index[raw]))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Corpus {
        name: name.to_string(),
        graphs,
        num_classes: class_index.len(),
        feature_dim,
    })
}

/// Writes graphs in the flat-file layout, with features as
/// `NAME_node_attributes.txt` and labels as `NAME_graph_labels.txt`.
pub fn write_tudataset(dir: &Path, name: &str, graphs: &[Graph]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut a = fs::File::create(file(dir, name, "A"))?;
    let mut ind = fs::File::create(file(dir, name, "graph_indicator"))?;
    let mut lab = fs::File::create(file(dir, name, "graph_labels"))?;
    let mut att = fs::File::create(file(dir, name, "node_attributes"))?;
    let mut offset = 0;
    for (gi, g) in graphs.iter().enumerate() {
        writeln!(lab, "{}", g.label().unwrap_or(0))?;
        for (v, row) in g.features().rows().into_iter().enumerate() {
            writeln!(ind, "{}", gi + 1)?;
            let fields: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
            writeln!(att, "{}", fields.join(", "))?;
            for (u, _) in g.adjacency().row(v) {
                writeln!(a, "{}, {}", offset + v + 1, offset + u + 1)?;
            }
        }
        offset += g.n();
    }
    Ok(())
}

/// `repeats` independent 80/10/10 shuffles of `0..n`, deterministic in
/// `seed`.
pub fn make_splits_for(n: usize, seed: u64, repeats: usize) -> Result<Vec<Split>> {
    if n < 10 {
        return Err(Error::CorpusTooSmall(n));
    }
    let n_valid = (n as f64 * 0.1).round() as usize;
    let n_test = n_valid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..repeats)
        .map(|_| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let test = idx[..n_test].to_vec();
            let valid = idx[n_test..n_test + n_valid].to_vec();
            let train = idx[n_test + n_valid..].to_vec();
            Split { train, valid, test }
        })
        .collect())
}

pub fn make_splits(c: &Corpus, seed: u64, repeats: usize) -> Result<Vec<Split>> {
    make_splits_for(c.len(), seed, repeats)
}
