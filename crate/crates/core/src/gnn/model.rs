use std::ops::Range;

use ndarray::{s, Array1, Array2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

use super::layers::{check_gcn_shapes, mean_rows, Activation, GcnLayerParams};
use super::preprocess::{Level, PreprocessedGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ModelKind {
    /// Convolutions followed by eigenvector pooling at every level.
    #[default]
    EigenGcn,
    /// The same convolution trunk on the input graph, then a mean over nodes.
    FlatGcn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Output width of both convolutions in each block; one entry per level.
    pub widths: Vec<usize>,
    pub pool_h: usize,
    /// Hidden widths of the dense head; a final layer to the class logits
    /// is always added.
    pub head_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::EigenGcn,
            widths: vec![64, 64, 64],
            pool_h: crate::eigenpool::DEFAULT_POOL_H,
            head_hidden: vec![64],
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    pub fn levels(&self) -> usize {
        self.widths.len()
    }

    fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) || self.head_hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive and at least one block is required".into()));
        }
        if self.kind == ModelKind::EigenGcn && self.pool_h == 0 {
            return Err(Error::Config("pooling truncation h must be at least 1".into()));
        }
        Ok(())
    }

    /// Width of the row vector fed to the head.
    fn representation_dim(&self) -> usize {
        let last = *self.widths.last().expect("validated non-empty");
        match self.kind {
            ModelKind::EigenGcn => last * self.pool_h,
            ModelKind::FlatGcn => last,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnBlock {
    pub conv1: GcnLayerParams,
    pub conv2: GcnLayerParams,
}

/// Affine layer `x W + b`; the bias is stored as a `1 × d_out` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

/// All trainable tensors. Gradients and optimizer moments share this layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub blocks: Vec<GcnBlock>,
    pub head: Vec<DenseLayer>,
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    /// Every tensor in a fixed order: block convolutions, then head weights
    /// and biases.
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(&b.conv1.weight);
            out.push(&b.conv2.weight);
        }
        for d in &self.head {
            out.push(&d.weight);
            out.push(&d.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.conv1.weight);
            out.push(&mut b.conv2.weight);
        }
        for d in &mut self.head {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += s · other`.
    pub fn add_scaled(&mut self, other: &Self, s: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(s, b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            *t *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenGcnModel {
    pub config: ModelConfig,
    pub input_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
    pub params: ModelParams,
}

/// One graph of a batch: its preprocessing and its node features.
pub type BatchItem<'a> = (&'a PreprocessedGraph, &'a Array2<f64>);

struct ConvCache {
    /// `adj_norm · input`, block-diagonal over the batch
    agg: Array2<f64>,
    z: Array2<f64>,
}

struct BlockCache {
    c1: ConvCache,
    c2: ConvCache,
    /// Rows of each graph in the stacked node features of this level.
    rows: Vec<Range<usize>>,
    /// Rows of each graph in the stacked block output.
    out_rows: Vec<Range<usize>>,
}

struct HeadCache {
    input: Array2<f64>,
    z: Array2<f64>,
}

struct Trace {
    blocks: Vec<BlockCache>,
    head: Vec<HeadCache>,
    /// One row per graph.
    logits: Array2<f64>,
}

fn ranges(sizes: impl Iterator<Item = usize>) -> Vec<Range<usize>> {
    let mut start = 0;
    sizes
        .map(|n| {
            start += n;
            start - n..start
        })
        .collect()
}

fn glorot(din: usize, dout: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let a = (6.0 / (din + dout) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a);
    Array2::from_shape_simple_fn((din, dout), || dist.sample(rng))
}

/// `[Θ_1ᵀh | … | Θ_Hᵀh]`.
pub(crate) fn pool_features(thetas: &[Array2<f64>], h: &Array2<f64>) -> Array2<f64> {
    let k = thetas.first().map_or(0, |t| t.ncols());
    let d = h.ncols();
    let mut out = Array2::zeros((k, d * thetas.len()));
    for (l, theta) in thetas.iter().enumerate() {
        out.slice_mut(s![.., l * d..(l + 1) * d]).assign(&theta.t().dot(h));
    }
    out
}

fn unpool_grad(thetas: &[Array2<f64>], dpooled: &Array2<f64>, n: usize) -> Array2<f64> {
    let d = dpooled.ncols() / thetas.len().max(1);
    let mut out = Array2::zeros((n, d));
    for (l, theta) in thetas.iter().enumerate() {
        out += &theta.dot(&dpooled.slice(s![.., l * d..(l + 1) * d]));
    }
    out
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &Array1<f64>) -> Array1<f64> {
    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + logits.mapv(|v| (v - m).exp()).sum().ln();
    logits.mapv(|v| v - lse)
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(logits: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

impl EigenGcnModel {
    /// Fresh model with uniform `±sqrt(6/(d_in+d_out))` weights and zero
    /// biases, drawn from a ChaCha8 stream seeded with `seed`.
    pub fn new(config: ModelConfig, input_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 || num_classes == 0 {
            return Err(Error::Config("input dimension and class count must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::with_capacity(config.levels());
        let mut din = input_dim;
        for &w in &config.widths {
            blocks.push(GcnBlock {
                conv1: GcnLayerParams { weight: glorot(din, w, &mut rng) },
                conv2: GcnLayerParams { weight: glorot(w, w, &mut rng) },
            });
            din = match config.kind {
                ModelKind::EigenGcn => w * config.pool_h,
                ModelKind::FlatGcn => w,
            };
        }
        let mut head = Vec::new();
        let mut din = config.representation_dim();
        for &w in config.head_hidden.iter().chain(std::iter::once(&num_classes)) {
            head.push(DenseLayer {
                weight: glorot(din, w, &mut rng),
                bias: Array2::zeros((1, w)),
            });
            din = w;
        }
        Ok(Self {
            config,
            input_dim,
            num_classes,
            seed,
            params: ModelParams { blocks, head },
        })
    }

    /// Model with given parameters; shapes are checked against the config.
    pub fn from_parts(config: ModelConfig, input_dim: usize, num_classes: usize, params: ModelParams) -> Result<Self> {
        let template = Self::new(config, input_dim, num_classes, 0)?;
        let want: Vec<_> = template.params.tensors().iter().map(|t| t.dim()).collect();
        let got: Vec<_> = params.tensors().iter().map(|t| t.dim()).collect();
        if want != got {
            return Err(shape_err(format!("{want:?}"), format!("{got:?}")));
        }
        Ok(Self { params, ..template })
    }

    pub fn logits(&self, pg: &PreprocessedGraph, x: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward(&[(pg, x)])?.logits.row(0).to_owned())
    }

    /// Logits of several graphs, one row each.
    pub fn logits_batch(&self, items: &[BatchItem<'_>]) -> Result<Array2<f64>> {
        Ok(self.forward(items)?.logits)
    }

    /// Output of the convolution and pooling trunk: the row vector handed to
    /// the head.
    pub fn representation(&self, pg: &PreprocessedGraph, x: &Array2<f64>) -> Result<Array1<f64>> {
        let trace = self.forward(&[(pg, x)])?;
        Ok(trace.head[0].input.row(0).to_owned())
    }

    fn check_inputs(&self, pg: &PreprocessedGraph, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(shape_err(format!("{} feature columns", self.input_dim), x.ncols()));
        }
        let first = pg
            .levels
            .first()
            .ok_or_else(|| Error::InvalidGraph("preprocessed graph has no levels".into()))?;
        if x.nrows() != first.n() {
            return Err(shape_err(format!("{} feature rows", first.n()), x.nrows()));
        }
        if self.config.kind == ModelKind::FlatGcn {
            return Ok(());
        }
        if pg.levels.len() != self.config.levels() {
            return Err(shape_err(format!("{} levels", self.config.levels()), pg.levels.len()));
        }
        if pg.final_nodes() != 1 {
            return Err(shape_err("1 final supernode", pg.final_nodes()));
        }
        for (i, level) in pg.levels.iter().enumerate() {
            if level.thetas.len() != self.config.pool_h {
                return Err(shape_err(format!("{} pooling operators", self.config.pool_h), level.thetas.len()));
            }
            if let Some(next) = pg.levels.get(i + 1) {
                if next.n() != level.num_clusters() {
                    return Err(shape_err(format!("{} nodes at level {}", level.num_clusters(), i + 1), next.n()));
                }
            }
        }
        Ok(())
    }

    /// Flat models run every block on the input graph.
    fn level_for(&self, b: usize) -> usize {
        match self.config.kind {
            ModelKind::EigenGcn => b,
            ModelKind::FlatGcn => 0,
        }
    }

    fn conv(
        &self,
        adjs: &[&Array2<f64>],
        rows: &[Range<usize>],
        h: &Array2<f64>,
        w: &GcnLayerParams,
    ) -> Result<(ConvCache, Array2<f64>)> {
        let mut agg = Array2::zeros(h.dim());
        for (adj, r) in adjs.iter().zip(rows) {
            let part = h.slice(s![r.clone(), ..]).to_owned();
            check_gcn_shapes(adj, &part, w)?;
            agg.slice_mut(s![r.clone(), ..]).assign(&adj.dot(&part));
        }
        let z = agg.dot(&w.weight);
        let out = self.config.activation.apply(&z);
        Ok((ConvCache { agg, z }, out))
    }

    /// `blockdiag(adj) · g`, the transpose of the aggregation since every
    /// `adj_norm` is symmetric.
    fn aggregate(adjs: &[&Array2<f64>], rows: &[Range<usize>], g: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(g.dim());
        for (adj, r) in adjs.iter().zip(rows) {
            out.slice_mut(s![r.clone(), ..]).assign(&adj.dot(&g.slice(s![r.clone(), ..])));
        }
        out
    }

    fn forward(&self, items: &[BatchItem<'_>]) -> Result<Trace> {
        if items.is_empty() {
            return Err(Error::EmptySplit("batch"));
        }
        for (pg, x) in items {
            self.check_inputs(pg, x)?;
        }
        let act = self.config.activation;
        let xs: Vec<_> = items.iter().map(|(_, x)| x.view()).collect();
        let mut h = ndarray::concatenate(Axis(0), &xs).expect("feature widths checked");
        let mut rows = ranges(items.iter().map(|(_, x)| x.nrows()));
        let mut blocks = Vec::with_capacity(self.params.blocks.len());
        for (b, block) in self.params.blocks.iter().enumerate() {
            let lv = self.level_for(b);
            let levels: Vec<&Level> = items.iter().map(|(pg, _)| &pg.levels[lv]).collect();
            let adjs: Vec<&Array2<f64>> = levels.iter().map(|l| &l.adj_norm).collect();
            let (c1, h1) = self.conv(&adjs, &rows, &h, &block.conv1)?;
            let (c2, h2) = self.conv(&adjs, &rows, &h1, &block.conv2)?;
            let out_rows = match self.config.kind {
                ModelKind::EigenGcn => {
                    let out_rows = ranges(levels.iter().map(|l| l.num_clusters()));
                    let mut pooled = Array2::zeros((out_rows.last().map_or(0, |r| r.end), h2.ncols() * self.config.pool_h));
                    for ((level, r), o) in levels.iter().zip(&rows).zip(&out_rows) {
                        let part = h2.slice(s![r.clone(), ..]).to_owned();
                        pooled.slice_mut(s![o.clone(), ..]).assign(&pool_features(&level.thetas, &part));
                    }
                    h = pooled;
                    out_rows
                }
                ModelKind::FlatGcn => {
                    h = h2;
                    rows.clone()
                }
            };
            blocks.push(BlockCache {
                c1,
                c2,
                rows: std::mem::replace(&mut rows, out_rows.clone()),
                out_rows,
            });
        }
        let mut rep = match self.config.kind {
            ModelKind::EigenGcn => h,
            ModelKind::FlatGcn => {
                let mut rep = Array2::zeros((items.len(), h.ncols()));
                for (g, r) in rows.iter().enumerate() {
                    rep.row_mut(g).assign(&mean_rows(&h.slice(s![r.clone(), ..]).to_owned()).row(0));
                }
                rep
            }
        };
        let mut head = Vec::with_capacity(self.params.head.len());
        let last = self.params.head.len() - 1;
        for (i, layer) in self.params.head.iter().enumerate() {
            let z = rep.dot(&layer.weight) + &layer.bias;
            let out = if i == last { z.clone() } else { act.apply(&z) };
            head.push(HeadCache { input: rep, z });
            rep = out;
        }
        Ok(Trace { blocks, head, logits: rep })
    }

    /// Softmax cross-entropy of one graph and the gradient of every
    /// parameter.
    pub fn loss_and_grad(&self, pg: &PreprocessedGraph, x: &Array2<f64>, label: usize) -> Result<(f64, ModelParams)> {
        self.batch_loss_grad(&[(pg, x)], &[label]).map(|(l, g, _)| (l, g))
    }

    /// Mean cross-entropy over a batch, the gradient of that mean, and the
    /// predicted class of every graph from the same forward pass. A
    /// non-finite loss is reported with the graph's position in the batch.
    pub fn batch_loss_grad(&self, items: &[BatchItem<'_>], labels: &[usize]) -> Result<(f64, ModelParams, Vec<usize>)> {
        if labels.len() != items.len() {
            return Err(shape_err(format!("{} labels", items.len()), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                max: self.num_classes - 1,
            });
        }
        let trace = self.forward(items)?;
        let batch = items.len() as f64;
        let mut up = Array2::zeros(trace.logits.dim());
        let mut loss = 0.0;
        let mut predictions = Vec::with_capacity(items.len());
        for (g, (logits, &label)) in trace.logits.rows().into_iter().zip(labels).enumerate() {
            let logits = logits.to_owned();
            let logp = log_softmax(&logits);
            if !logp[label].is_finite() {
                return Err(Error::NonFiniteLoss(g));
            }
            loss -= logp[label];
            let mut row = logp.mapv(f64::exp);
            row[label] -= 1.0;
            up.row_mut(g).assign(&(row / batch));
            predictions.push(argmax(&logits));
        }
        let grads = self.backward(items, &trace, up);
        Ok((loss / batch, grads, predictions))
    }

    fn backward(&self, items: &[BatchItem<'_>], trace: &Trace, dlogits: Array2<f64>) -> ModelParams {
        let act = self.config.activation;
        let mut grads = self.params.zeros_like();
        let mut up = dlogits;
        let last = self.params.head.len() - 1;
        for i in (0..=last).rev() {
            let cache = &trace.head[i];
            let dz = if i == last { up } else { act.backward(&cache.z, &up) };
            grads.head[i].weight = cache.input.t().dot(&dz);
            grads.head[i].bias = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
            up = dz.dot(&self.params.head[i].weight.t());
        }

        if self.config.kind == ModelKind::FlatGcn {
            let rows = &trace.blocks.last().expect("at least one block").out_rows;
            let mut spread = Array2::zeros((rows.last().map_or(0, |r| r.end), up.ncols()));
            for (g, r) in rows.iter().enumerate() {
                let row = &up.row(g) / r.len() as f64;
                spread.slice_mut(s![r.clone(), ..]).assign(&row.broadcast((r.len(), row.len())).expect("row broadcast"));
            }
            up = spread;
        }
        for b in (0..self.params.blocks.len()).rev() {
            let lv = self.level_for(b);
            let levels: Vec<&Level> = items.iter().map(|(pg, _)| &pg.levels[lv]).collect();
            let adjs: Vec<&Array2<f64>> = levels.iter().map(|l| &l.adj_norm).collect();
            let cache = &trace.blocks[b];
            let block = &self.params.blocks[b];
            let dh2 = match self.config.kind {
                ModelKind::EigenGcn => {
                    let mut dh2 = Array2::zeros(cache.c2.z.dim());
                    for ((level, r), o) in levels.iter().zip(&cache.rows).zip(&cache.out_rows) {
                        let part = up.slice(s![o.clone(), ..]).to_owned();
                        dh2.slice_mut(s![r.clone(), ..]).assign(&unpool_grad(&level.thetas, &part, r.len()));
                    }
                    dh2
                }
                ModelKind::FlatGcn => up,
            };
            let dz2 = act.backward(&cache.c2.z, &dh2);
            grads.blocks[b].conv2.weight = cache.c2.agg.t().dot(&dz2);
            let dh1 = Self::aggregate(&adjs, &cache.rows, &dz2.dot(&block.conv2.weight.t()));
            let dz1 = act.backward(&cache.c1.z, &dh1);
            grads.blocks[b].conv1.weight = cache.c1.agg.t().dot(&dz1);
            if b == 0 {
                break;
            }
            up = Self::aggregate(&adjs, &cache.rows, &dz1.dot(&block.conv1.weight.t()));
        }
        grads
    }

    /// Smallest `|z|` over every pre-activation that passes through the
    /// nonlinearity. Central differences are only meaningful when this is
    /// well above the step size times the input scale.
    pub fn activation_margin(&self, pg: &PreprocessedGraph, x: &Array2<f64>) -> Result<f64> {
        let trace = self.forward(&[(pg, x)])?;
        let last = trace.head.len() - 1;
        let zs = trace
            .blocks
            .iter()
            .flat_map(|b| [&b.c1.z, &b.c2.z])
            .chain(trace.head[..last].iter().map(|h| &h.z));
        Ok(zs.flat_map(|z| z.iter()).fold(f64::INFINITY, |m, v| m.min(v.abs())))
    }

    /// Loss only, for finite-difference checks.
    pub fn loss(&self, pg: &PreprocessedGraph, x: &Array2<f64>, label: usize) -> Result<f64> {
        let logits = self.logits(pg, x)?;
        Ok(-log_softmax(&logits)[label])
    }

    pub fn predict(&self, pg: &PreprocessedGraph, x: &Array2<f64>) -> Result<usize> {
        Ok(argmax(&self.logits(pg, x)?))
    }

    /// Predicted class of every graph in `items`.
    pub fn predict_batch(&self, items: &[BatchItem<'_>]) -> Result<Vec<usize>> {
        let logits = self.logits_batch(items)?;
        Ok(logits.rows().into_iter().map(|r| argmax(&r.to_owned())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::preprocess::{preprocess, preprocess_flat, PreprocessConfig};
    use crate::graph::Graph;
    use ndarray::array;

    fn small_graph() -> Graph {
        let x = Array2::from_shape_fn((6, 2), |(i, j)| (1.3 * i as f64 + 2.1 * j as f64).sin() * 2.0);
        Graph::from_unit_edges(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)], x).unwrap()
    }

    fn tiny_config(kind: ModelKind) -> ModelConfig {
        ModelConfig {
            kind,
            widths: vec![6, 5],
            pool_h: 2,
            head_hidden: vec![5],
            activation: Activation::Relu,
        }
    }

    fn prepared(kind: ModelKind) -> (EigenGcnModel, crate::gnn::PreprocessedGraph, Graph) {
        let g = small_graph();
        let cfg = tiny_config(kind);
        let pg = match kind {
            ModelKind::EigenGcn => preprocess(
                &g,
                &PreprocessConfig {
                    levels: 2,
                    pool_h: 2,
                    ..Default::default()
                },
            )
            .unwrap(),
            ModelKind::FlatGcn => preprocess_flat(&g).unwrap(),
        };
        (EigenGcnModel::new(cfg, 2, 3, 11).unwrap(), pg, g)
    }

    #[test]
    fn shapes_follow_config() {
        let m = EigenGcnModel::new(ModelConfig::default(), 5, 6, 0).unwrap();
        let dims: Vec<_> = m.params.tensors().iter().map(|t| t.dim()).collect();
        assert_eq!(
            dims,
            vec![(5, 64), (64, 64), (192, 64), (64, 64), (192, 64), (64, 64), (192, 64), (1, 64), (64, 6), (1, 6)]
        );
        let flat = EigenGcnModel::new(
            ModelConfig {
                kind: ModelKind::FlatGcn,
                ..Default::default()
            },
            5,
            6,
            0,
        )
        .unwrap();
        assert_eq!(flat.params.blocks[1].conv1.weight.dim(), (64, 64));
        assert_eq!(flat.params.head[0].weight.dim(), (64, 64));
    }

    #[test]
    fn init_bounds_and_determinism() {
        let a = EigenGcnModel::new(ModelConfig::default(), 3, 2, 5).unwrap();
        let b = EigenGcnModel::new(ModelConfig::default(), 3, 2, 5).unwrap();
        let c = EigenGcnModel::new(ModelConfig::default(), 3, 2, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
        let bound = (6.0f64 / (3.0 + 64.0)).sqrt();
        assert!(a.params.blocks[0].conv1.weight.iter().all(|v| v.abs() <= bound));
        assert!(a.params.head.iter().all(|d| d.bias.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_weights_give_final_bias() {
        for kind in [ModelKind::EigenGcn, ModelKind::FlatGcn] {
            let (mut m, pg, g) = prepared(kind);
            for t in m.params.tensors_mut() {
                t.fill(0.0);
            }
            m.params.head.last_mut().unwrap().bias = array![[0.5, -1.0, 2.0]];
            assert_eq!(m.logits(&pg, g.features()).unwrap(), array![0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let (mut m, pg, g) = prepared(ModelKind::EigenGcn);
        let last = m.params.head.last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias.fill(1.5);
        let (loss, _) = m.loss_and_grad(&pg, g.features(), 1).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn batch_of_one_matches() {
        let (m, pg, g) = prepared(ModelKind::EigenGcn);
        let single = m.logits(&pg, g.features()).unwrap();
        let batch = m.logits_batch(&[(&pg, g.features())]).unwrap();
        assert_eq!(batch.row(0), single);
    }

    #[test]
    fn batched_pass_matches_single_graphs() {
        for kind in [ModelKind::EigenGcn, ModelKind::FlatGcn] {
            let (m, pg, g) = prepared(kind);
            let g2 = Graph::from_unit_edges(4, &[(0, 1), (1, 2), (2, 3)], Array2::from_elem((4, 2), 0.7)).unwrap();
            let pg2 = match kind {
                ModelKind::EigenGcn => preprocess(&g2, &PreprocessConfig { levels: 2, pool_h: 2, ..Default::default() }).unwrap(),
                ModelKind::FlatGcn => preprocess_flat(&g2).unwrap(),
            };
            let items = [(&pg, g.features()), (&pg2, g2.features())];
            let logits = m.logits_batch(&items).unwrap();
            assert!((&logits.row(0) - &m.logits(&pg, g.features()).unwrap()).iter().all(|v| v.abs() < 1e-12));
            assert!((&logits.row(1) - &m.logits(&pg2, g2.features()).unwrap()).iter().all(|v| v.abs() < 1e-12));
            let (loss, grads, _) = m.batch_loss_grad(&items, &[2, 0]).unwrap();
            let (l1, g1) = m.loss_and_grad(&pg, g.features(), 2).unwrap();
            let (l2, g2) = m.loss_and_grad(&pg2, g2.features(), 0).unwrap();
            assert!((loss - (l1 + l2) / 2.0).abs() < 1e-12);
            let mut mean = g1;
            mean.add_scaled(&g2, 1.0);
            mean.scale(0.5);
            for (a, b) in grads.tensors().iter().zip(mean.tensors()) {
                assert!((*a - b).iter().all(|v| v.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn input_checks() {
        let (m, pg, g) = prepared(ModelKind::EigenGcn);
        assert!(m.logits(&pg, &Array2::zeros((6, 3))).is_err());
        assert!(m.logits(&pg, &Array2::zeros((5, 2))).is_err());
        assert!(m.loss_and_grad(&pg, g.features(), 3).is_err());
        let flat_pg = preprocess_flat(&g).unwrap();
        assert!(m.logits(&flat_pg, g.features()).is_err());
    }

    fn finite_difference_check(kind: ModelKind) {
        let (m, pg, g) = prepared(kind);
        let x = g.features();
        let (_, grads) = m.loss_and_grad(&pg, x, 2).unwrap();
        let eps = 1e-4;
        let mut probe = m.clone();
        let n_tensors = m.params.tensors().len();
        for t in 0..n_tensors {
            let (rows, cols) = m.params.tensors()[t].dim();
            for idx in (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))) {
                let orig = m.params.tensors()[t][idx];
                probe.params.tensors_mut()[t][idx] = orig + eps;
                let up = probe.loss(&pg, x, 2).unwrap();
                probe.params.tensors_mut()[t][idx] = orig - eps;
                let down = probe.loss(&pg, x, 2).unwrap();
                probe.params.tensors_mut()[t][idx] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = grads.tensors()[t][idx];
                let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                assert!(err < 1e-3, "{kind:?} tensor {t} entry {idx:?}: {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        finite_difference_check(ModelKind::EigenGcn);
        finite_difference_check(ModelKind::FlatGcn);
    }

    #[test]
    fn pooling_is_linear() {
        let (_, pg, _) = prepared(ModelKind::EigenGcn);
        let thetas = &pg.levels[0].thetas;
        let x = Array2::from_shape_fn((6, 3), |(i, j)| (i as f64 - j as f64).sin());
        let y = Array2::from_shape_fn((6, 3), |(i, j)| (i * j) as f64 * 0.1);
        let lhs = pool_features(thetas, &(&x * 2.0 - &y * 0.5));
        let rhs = pool_features(thetas, &x) * 2.0 - pool_features(thetas, &y) * 0.5;
        assert!((lhs - rhs).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn pooling_keeps_norm_through_the_stack() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| ((i * 3 + j) as f64).cos());
        let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (5, 6), (6, 7), (7, 8), (8, 9), (4, 5), (2, 7)];
        let g = Graph::from_unit_edges(10, &edges, x).unwrap();
        let pre = PreprocessConfig { levels: 3, pool_h: 10, ..Default::default() };
        let pg = preprocess(&g, &pre).unwrap();
        let h = pg.levels.iter().map(|l| l.view.partition.n_max()).max().unwrap();
        let pg = preprocess(&g, &PreprocessConfig { pool_h: h, ..pre }).unwrap();
        let widths = vec![2, 2 * h, 2 * h * h];
        let cfg = ModelConfig {
            kind: ModelKind::EigenGcn,
            widths: widths.clone(),
            pool_h: h,
            head_hidden: vec![],
            activation: Activation::Identity,
        };
        let mut m = EigenGcnModel::new(cfg, 2, 2, 0).unwrap();
        for (b, &w) in widths.iter().enumerate() {
            m.params.blocks[b].conv1.weight = Array2::eye(w);
            m.params.blocks[b].conv2.weight = Array2::eye(w);
        }
        let trace = m.forward(&[(&pg, g.features())]).unwrap();
        let norm = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (b, level) in pg.levels.iter().enumerate() {
            let leaving = &trace.blocks[b].c2.z;
            let entering = pool_features(&level.thetas, leaving);
            assert!((norm(&entering) - norm(leaving)).abs() <= 1e-10 * norm(leaving).max(1.0));
            let next_agg = match pg.levels.get(b + 1) {
                Some(next) => next.adj_norm.dot(&entering),
                None => trace.head[0].input.clone(),
            };
            let cached = match trace.blocks.get(b + 1) {
                Some(block) => &block.c1.agg,
                None => &trace.head[0].input,
            };
            assert!((cached - &next_agg).iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn log_softmax_and_argmax() {
        let l = log_softmax(&array![1000.0, 1000.0]);
        assert!((l[0] - (0.5f64).ln()).abs() < 1e-12);
        assert_eq!(argmax(&array![1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&array![0.0, 0.0]), 0);
    }
}
