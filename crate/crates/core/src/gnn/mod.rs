//! Graph convolutions, the pooled classifier and its training loop.
//!
//! A model is a stack of blocks. Each block applies two graph convolutions
//! on one level of a [`PreprocessedGraph`] and then pools with that level's
//! operators, so the last block leaves a single supernode whose feature row
//! feeds a dense head.

mod checkpoint;
mod layers;
mod model;
mod preprocess;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use layers::{gcn_forward, renormalized_adjacency, Activation, GcnLayerParams};
pub use model::{argmax, log_softmax, BatchItem, DenseLayer, EigenGcnModel, GcnBlock, ModelConfig, ModelKind, ModelParams};
pub use preprocess::{canonical_order, preprocess, preprocess_flat, Level, PreprocessConfig, PreprocessedGraph};
pub use train::{batch_gradient, evaluate, fit_split, train, SplitResult, write_metrics_csv, Adam, EpochMetrics, PreparedCorpus, TrainConfig, TrainOutcome};
