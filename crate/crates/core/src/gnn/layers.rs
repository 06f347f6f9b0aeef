use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::graph::SparseAdjacency;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Activation {
    #[default]
    Relu,
    /// No nonlinearity; used to check the linear parts of the model.
    Identity,
}

impl Activation {
    pub fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Self::Relu => z.mapv(|v| v.max(0.0)),
            Self::Identity => z.clone(),
        }
    }

    /// `upstream ⊙ act'(z)`.
    pub fn backward(self, z: &Array2<f64>, upstream: &Array2<f64>) -> Array2<f64> {
        match self {
            Self::Relu => {
                let mut out = upstream.clone();
                out.zip_mut_with(z, |g, &v| {
                    if v <= 0.0 {
                        *g = 0.0
                    }
                });
                out
            }
            Self::Identity => upstream.clone(),
        }
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃` the degrees of `A + I`.
pub fn renormalized_adjacency(adj: &SparseAdjacency) -> Array2<f64> {
    let n = adj.n();
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / (adj.degree(i) + 1.0).sqrt()).collect();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        out[[i, i]] = inv_sqrt[i] * inv_sqrt[i];
        for (j, w) in adj.row(i) {
            out[[i, j]] = inv_sqrt[i] * w * inv_sqrt[j];
        }
    }
    out
}

/// Weight matrix of one graph convolution (`d_in × d_out`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnLayerParams {
    pub weight: Array2<f64>,
}

/// `ReLU(adj_norm · x · W)`.
pub fn gcn_forward(adj_norm: &Array2<f64>, x: &Array2<f64>, w: &GcnLayerParams) -> Result<Array2<f64>> {
    let pre = gcn_linear(adj_norm, x, w)?;
    Ok(Activation::Relu.apply(&pre))
}

pub(crate) fn gcn_linear(adj_norm: &Array2<f64>, x: &Array2<f64>, w: &GcnLayerParams) -> Result<Array2<f64>> {
    check_gcn_shapes(adj_norm, x, w)?;
    Ok(adj_norm.dot(x).dot(&w.weight))
}

pub(crate) fn check_gcn_shapes(adj_norm: &Array2<f64>, x: &Array2<f64>, w: &GcnLayerParams) -> Result<()> {
    let n = x.nrows();
    if adj_norm.dim() != (n, n) {
        return Err(shape_err(format!("{n}x{n} adjacency"), format!("{:?}", adj_norm.dim())));
    }
    if w.weight.nrows() != x.ncols() {
        return Err(shape_err(
            format!("{} weight rows", x.ncols()),
            format!("{} weight rows", w.weight.nrows()),
        ));
    }
    Ok(())
}

/// Mean over nodes, as a `1 × d` row.
pub(crate) fn mean_rows(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows().max(1) as f64;
    (x.sum_axis(Axis(0)) / n).insert_axis(Axis(0))
}
