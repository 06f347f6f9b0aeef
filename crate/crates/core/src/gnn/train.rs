use std::io::Write;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tudataset::Split;

use super::model::{BatchItem, EigenGcnModel, ModelConfig, ModelKind, ModelParams};
use super::preprocess::{preprocess, preprocess_flat, PreprocessConfig, PreprocessedGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 300,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Adam with `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: ModelParams,
    v: ModelParams,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let iter = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()));
        for ((p, g), (m, v)) in iter {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            });
        }
    }
}

/// Graphs ready for training: cached preprocessing plus features and labels.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub graphs: Vec<PreprocessedGraph>,
    pub features: Vec<Array2<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub input_dim: usize,
}

impl PreparedCorpus {
    /// Preprocesses every graph in parallel. Flat models skip pooling.
    /// Every graph must carry a label.
    pub fn build(graphs: &[Graph], num_classes: usize, kind: ModelKind, cfg: &PreprocessConfig) -> Result<Self> {
        let input_dim = graphs.first().map_or(0, Graph::feature_dim);
        let mut labels = Vec::with_capacity(graphs.len());
        for (i, g) in graphs.iter().enumerate() {
            if g.feature_dim() != input_dim {
                return Err(Error::InvalidGraph(format!("graph {i} has {} feature columns", g.feature_dim())));
            }
            match g.label() {
                Some(l) if l < num_classes => labels.push(l),
                _ => return Err(Error::InvalidGraph(format!("graph {i} lacks a valid label"))),
            }
        }
        let processed = graphs
            .par_iter()
            .enumerate()
            .map(|(i, g)| {
                match kind {
                    ModelKind::EigenGcn => preprocess(g, cfg),
                    ModelKind::FlatGcn => preprocess_flat(g),
                }
                .map_err(|e| Error::InvalidGraph(format!("graph {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            graphs: processed,
            features: graphs.iter().map(|g| g.features().clone()).collect(),
            labels,
            num_classes,
            input_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean loss of the training graphs, each measured before the update of
    /// its batch.
    pub train_loss: f64,
    pub train_acc: f64,
    pub valid_acc: f64,
}

pub fn write_metrics_csv<W: Write>(metrics: &[EpochMetrics], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epoch,train_loss,train_acc,valid_acc")?;
    for m in metrics {
        writeln!(w, "{},{},{},{}", m.epoch, m.train_loss, m.train_acc, m.valid_acc)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub best: EigenGcnModel,
    pub best_epoch: usize,
    pub best_valid_acc: f64,
    pub metrics: Vec<EpochMetrics>,
}

/// Mean loss and gradient over `batch`, plus the number of graphs the
/// model classified correctly before the update.
pub fn batch_gradient(m: &EigenGcnModel, data: &PreparedCorpus, batch: &[usize]) -> Result<(f64, ModelParams, usize)> {
    if batch.is_empty() {
        return Err(Error::EmptySplit("batch"));
    }
    let items: Vec<BatchItem<'_>> = batch.iter().map(|&i| (&data.graphs[i], &data.features[i])).collect();
    let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
    let (loss, grads, predicted) = m.batch_loss_grad(&items, &labels).map_err(|e| match e {
        Error::NonFiniteLoss(pos) => Error::NonFiniteLoss(batch[pos]),
        e => e,
    })?;
    let correct = predicted.iter().zip(&labels).filter(|(p, l)| p == l).count();
    Ok((loss, grads, correct))
}

/// Mini-batch Adam training. Graph order is reshuffled every epoch from a
/// ChaCha8 stream seeded with `cfg.seed`.
pub fn train(model: &EigenGcnModel, data: &PreparedCorpus, train_idx: &[usize], valid_idx: &[usize], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if train_idx.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if valid_idx.is_empty() {
        return Err(Error::EmptySplit("valid"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut m = model.clone();
    let mut opt = Adam::new(&m.params, cfg.lr);
    let mut order = train_idx.to_vec();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best = (m.clone(), 0, evaluate(&m, data, valid_idx)?, f64::INFINITY);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads, c) = batch_gradient(&m, data, batch)?;
            loss_sum += loss * batch.len() as f64;
            correct += c;
            opt.update(&mut m.params, &grads);
        }
        let train_loss = loss_sum / order.len() as f64;
        let valid_acc = evaluate(&m, data, valid_idx)?;
        metrics.push(EpochMetrics {
            epoch,
            train_loss,
            train_acc: correct as f64 / order.len() as f64,
            valid_acc,
        });
        if valid_acc > best.2 || (valid_acc == best.2 && train_loss < best.3) {
            best = (m.clone(), epoch, valid_acc, train_loss);
        }
    }
    Ok(TrainOutcome {
        best: best.0,
        best_epoch: best.1,
        best_valid_acc: best.2,
        metrics,
    })
}

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub outcome: TrainOutcome,
    pub test_acc: f64,
}

/// Trains a fresh model (initialised from `cfg.seed`) on one split and
/// scores the best-validation parameters on its test part.
pub fn fit_split(data: &PreparedCorpus, config: &ModelConfig, split: &Split, cfg: &TrainConfig) -> Result<SplitResult> {
    let model = EigenGcnModel::new(config.clone(), data.input_dim, data.num_classes, cfg.seed)?;
    let outcome = train(&model, data, &split.train, &split.valid, cfg)?;
    let test_acc = evaluate(&outcome.best, data, &split.test)?;
    Ok(SplitResult { outcome, test_acc })
}

/// Fraction of `indices` whose argmax logit equals the label.
pub fn evaluate(m: &EigenGcnModel, data: &PreparedCorpus, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::EmptySplit("evaluation"));
    }
    let hits = indices
        .par_chunks(64)
        .map(|chunk| {
            let items: Vec<BatchItem<'_>> = chunk.iter().map(|&i| (&data.graphs[i], &data.features[i])).collect();
            let predicted = m.predict_batch(&items)?;
            Ok(chunk.iter().zip(predicted).filter(|&(&i, p)| data.labels[i] == p).count())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / indices.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::cycles_and_stars;

    fn small_setup() -> (EigenGcnModel, PreparedCorpus) {
        let graphs = cycles_and_stars(20, 3);
        let cfg = ModelConfig {
            widths: vec![8, 8],
            ..Default::default()
        };
        let pre = PreprocessConfig {
            levels: 2,
            ..Default::default()
        };
        let data = PreparedCorpus::build(&graphs, 2, ModelKind::EigenGcn, &pre).unwrap();
        (EigenGcnModel::new(cfg, data.input_dim, 2, 4).unwrap(), data)
    }

    #[test]
    fn zero_lr_step_leaves_params() {
        let (m, data) = small_setup();
        let (_, grads, _) = batch_gradient(&m, &data, &[0, 1, 2]).unwrap();
        let mut params = m.params.clone();
        Adam::new(&params, 0.0).update(&mut params, &grads);
        assert_eq!(params, m.params);
    }

    #[test]
    fn small_step_lowers_batch_loss() {
        let (m, data) = small_setup();
        let batch: Vec<usize> = (0..10).collect();
        let (before, grads, _) = batch_gradient(&m, &data, &batch).unwrap();
        let mut params = m.params.clone();
        Adam::new(&params, 1e-4).update(&mut params, &grads);
        let stepped = EigenGcnModel { params, ..m.clone() };
        let (after, _, _) = batch_gradient(&stepped, &data, &batch).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn full_batch_gradient_is_batching_independent() {
        let (m, data) = small_setup();
        let all: Vec<usize> = (0..data.len()).collect();
        let (_, full, _) = batch_gradient(&m, &data, &all).unwrap();
        let mut acc = m.params.zeros_like();
        for chunk in all.chunks(7) {
            let (_, g, _) = batch_gradient(&m, &data, chunk).unwrap();
            acc.add_scaled(&g, chunk.len() as f64 / all.len() as f64);
        }
        for (a, b) in full.tensors().iter().zip(acc.tensors()) {
            assert!((*a - b).iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (m, data) = small_setup();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            ..Default::default()
        };
        let train_idx: Vec<usize> = (0..14).collect();
        let a = train(&m, &data, &train_idx, &[14, 15, 16], &cfg).unwrap();
        let b = train(&m, &data, &train_idx, &[14, 15, 16], &cfg).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.best.params, b.best.params);
        assert!(train(&m, &data, &[], &[1], &cfg).is_err());
        assert!(train(&m, &data, &[1], &[], &cfg).is_err());
    }

    #[test]
    fn evaluate_counts() {
        let (mut m, data) = small_setup();
        for t in m.params.tensors_mut() {
            t.fill(0.0);
        }
        // constant class 0 over a set holding one graph of each class
        let one_each = [
            data.labels.iter().position(|&l| l == 0).unwrap(),
            data.labels.iter().position(|&l| l == 1).unwrap(),
        ];
        assert_eq!(evaluate(&m, &data, &one_each).unwrap(), 0.5);
        assert_eq!(evaluate(&m, &data, &one_each[..1]).unwrap(), 1.0);
        assert!(evaluate(&m, &data, &[]).is_err());
    }

    #[test]
    fn metrics_csv_layout() {
        let mut buf = Vec::new();
        let rows = [EpochMetrics {
            epoch: 1,
            train_loss: 0.5,
            train_acc: 0.25,
            valid_acc: 1.0,
        }];
        write_metrics_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,train_loss,train_acc,valid_acc\n1,0.5,0.25,1\n");
    }
}
