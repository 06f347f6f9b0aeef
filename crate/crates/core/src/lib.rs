//! Eigenvector-based graph pooling and a hierarchical GCN graph classifier.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`]: undirected weighted graphs and node signals
//! * [`spectral`]: Laplacians, a Jacobi eigensolver and the graph Fourier transform
//! * [`coarsening`]: spectral-clustering partitions and coarsening operators
//! * [`eigenpool`]: pooling operators built from subgraph eigenvectors
//! * [`gnn`]: GCN layers, the pooled classifier stack, training and evaluation
//! * [`tudataset`]: TUDataset corpus loader and train/valid/test splits
//! * [`synthetic`]: small generated corpora with a known answer
//! * [`verify`]: randomized checks of the pooling and model properties

pub mod coarsening;
pub mod eigenpool;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod spectral;
pub mod synthetic;
pub mod tudataset;
pub mod verify;

pub use error::{Error, Result};
