//! Eigenvector pooling.
//!
//! Each subgraph of a partition contributes the eigenvectors of its own
//! Laplacian. Operator `Θ_l` collects the `l`-th eigenvector of every
//! subgraph, zero-padded to the whole graph, as its columns; a subgraph with
//! fewer than `l` nodes contributes a zero column. Pooling a signal `X` with
//! the first `h` operators yields `[Θ_1ᵀX | … | Θ_hᵀX]`, one row per
//! supernode. With all `n_max` operators the family is an orthonormal
//! filterbank, so the signal can be rebuilt exactly and its energy is kept.

use std::io::Write;

use ndarray::{s, Array2, Axis};
use rayon::prelude::*;

use crate::coarsening::CoarsenedView;
use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, GraphSignal};
use crate::spectral::{eig_sym, gft, laplacian, laplacian_dense, SpectralBasis};

/// Default number of pooling operators kept.
pub const DEFAULT_POOL_H: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct PoolingBank {
    pub view: CoarsenedView,
    /// One basis per subgraph, rows in node-list order.
    pub bases: Vec<SpectralBasis>,
    pub n_max: usize,
    /// Number of operators used by [`PoolingBank::pool`], `1 ≤ h ≤ n_max`.
    pub h: usize,
}

/// Eigendecomposes the Laplacian of every subgraph in `view`; `h` is clamped
/// to the largest subgraph size.
pub fn build_bank(view: &CoarsenedView, h: usize) -> Result<PoolingBank> {
    if h == 0 {
        return Err(Error::Config("pooling truncation h must be at least 1".into()));
    }
    let bases = view
        .induced
        .iter()
        .enumerate()
        .map(|(k, a)| {
            if a.nrows() == 1 {
                return Ok(SpectralBasis::singleton());
            }
            eig_sym(&laplacian_dense(&a.view())).map_err(|e| Error::Subgraph {
                subgraph: k,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n_max = view.partition.n_max();
    Ok(PoolingBank {
        view: view.clone(),
        bases,
        n_max,
        h: h.min(n_max),
    })
}

impl PoolingBank {
    pub fn n(&self) -> usize {
        self.view.partition.n()
    }

    pub fn num_subgraphs(&self) -> usize {
        self.view.num_subgraphs()
    }

    /// Same bank with a different truncation (clamped to `n_max`).
    pub fn with_h(&self, h: usize) -> Self {
        Self {
            h: h.clamp(1, self.n_max.max(1)),
            ..self.clone()
        }
    }

    /// The `n × K` operator `Θ_l`, `l` counted from 1.
    pub fn operator(&self, l: usize) -> Result<Array2<f64>> {
        if l == 0 || l > self.n_max {
            return Err(Error::IndexOutOfRange {
                index: l,
                max: self.n_max,
            });
        }
        let mut theta = Array2::zeros((self.n(), self.num_subgraphs()));
        for (k, basis) in self.bases.iter().enumerate() {
            if l > basis.dim() {
                continue;
            }
            let u = basis.eigenvectors.column(l - 1);
            for (j, &v) in self.view.partition.node_list(k).iter().enumerate() {
                theta[[v, k]] = u[j];
            }
        }
        Ok(theta)
    }

    /// `Θ_1 … Θ_h` for the bank's own `h`.
    pub fn operators(&self) -> Vec<Array2<f64>> {
        (1..=self.h)
            .map(|l| self.operator(l).expect("l within 1..=n_max"))
            .collect()
    }

    /// Per-subgraph Fourier coefficients: entry `k` is `U_kᵀ X[Γ_k]`
    /// (`N_k × d`).
    fn local_coefficients(&self, x: &GraphSignal) -> Result<Vec<Array2<f64>>> {
        if x.nrows() != self.n() {
            return Err(shape_err(format!("{} rows", self.n()), format!("{} rows", x.nrows())));
        }
        Ok(self
            .bases
            .iter()
            .enumerate()
            .map(|(k, basis)| {
                let local = x.select(Axis(0), self.view.partition.node_list(k));
                basis.eigenvectors.t().dot(&local)
            })
            .collect())
    }

    /// Pooled signal `[X_1 | … | X_h]` of shape `K × d·h`. Blocks beyond a
    /// subgraph's size are exact zeros.
    pub fn pool(&self, x: &GraphSignal) -> Result<Array2<f64>> {
        let coeffs = self.local_coefficients(x)?;
        let d = x.ncols();
        let mut out = Array2::zeros((self.num_subgraphs(), d * self.h));
        for (k, c) in coeffs.iter().enumerate() {
            for l in 0..self.h.min(c.nrows()) {
                out.slice_mut(s![k, l * d..(l + 1) * d]).assign(&c.row(l));
            }
        }
        Ok(out)
    }

    /// `Σ_{l ≤ l_count} Θ_l X_l` from a pooled signal produced by
    /// [`PoolingBank::pool`].
    pub fn reconstruct(&self, pooled: &Array2<f64>, l_count: usize) -> Result<GraphSignal> {
        if pooled.nrows() != self.num_subgraphs() || pooled.ncols() % self.h != 0 {
            return Err(shape_err(
                format!("{} rows and a multiple of {} columns", self.num_subgraphs(), self.h),
                format!("{}x{}", pooled.nrows(), pooled.ncols()),
            ));
        }
        if l_count > self.h {
            return Err(Error::IndexOutOfRange {
                index: l_count,
                max: self.h,
            });
        }
        let d = pooled.ncols() / self.h;
        let mut x = Array2::zeros((self.n(), d));
        for (k, basis) in self.bases.iter().enumerate() {
            let nodes = self.view.partition.node_list(k);
            for l in 0..l_count.min(basis.dim()) {
                let coeff = pooled.slice(s![k, l * d..(l + 1) * d]);
                for (j, &v) in nodes.iter().enumerate() {
                    let u = basis.eigenvectors[[j, l]];
                    x.row_mut(v).scaled_add(u, &coeff);
                }
            }
        }
        Ok(x)
    }

    /// Energy of each pooled block `‖X_l‖²` for `l = 1..=n_max`.
    pub fn block_energies(&self, x: &GraphSignal) -> Result<Vec<f64>> {
        let mut energy = vec![0.0; self.n_max];
        for c in self.local_coefficients(x)? {
            for (l, row) in c.axis_iter(Axis(0)).enumerate() {
                energy[l] += row.dot(&row);
            }
        }
        Ok(energy)
    }

    /// Fraction of signal energy carried by the first `h` blocks; 1 for a
    /// zero signal.
    pub fn energy_ratio(&self, x: &GraphSignal, h: usize) -> Result<f64> {
        let energy = self.block_energies(x)?;
        let total: f64 = energy.iter().sum();
        if total == 0.0 {
            return Ok(1.0);
        }
        let kept: f64 = energy.iter().take(h).sum();
        Ok(kept / total)
    }
}

/// Cumulative energy fractions `r_1 … r_{h_max}` of a graph signal in the
/// whole-graph Fourier basis; entries past the node count are 1.
pub fn graph_energy_profile(g: &Graph, h_max: usize) -> Result<Vec<f64>> {
    let basis = eig_sym(&laplacian(g))?;
    let coeffs = gft(g.features(), &basis)?;
    let energy: Vec<f64> = coeffs.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
    let total: f64 = energy.iter().sum();
    let mut out = Vec::with_capacity(h_max);
    let mut acc = 0.0;
    for h in 1..=h_max {
        if h > energy.len() || total == 0.0 {
            out.push(1.0);
        } else {
            acc += energy[h - 1];
            out.push(acc / total);
        }
    }
    Ok(out)
}

/// Dataset average of [`graph_energy_profile`] for `H = 1..=h_max`.
pub fn corpus_energy_curve(graphs: &[Graph], h_max: usize) -> Result<Vec<f64>> {
    let profiles = graphs
        .par_iter()
        .map(|g| graph_energy_profile(g, h_max))
        .collect::<Result<Vec<_>>>()?;
    let mut curve = vec![0.0; h_max];
    for p in &profiles {
        for (c, v) in curve.iter_mut().zip(p) {
            *c += v;
        }
    }
    let count = profiles.len().max(1) as f64;
    Ok(curve.into_iter().map(|c| c / count).collect())
}

/// Writes an energy curve as `H,ratio` CSV.
pub fn write_energy_csv<W: Write>(curve: &[f64], mut w: W) -> std::io::Result<()> {
    writeln!(w, "H,ratio")?;
    for (h, r) in curve.iter().enumerate() {
        writeln!(w, "{},{}", h + 1, r)?;
    }
    Ok(())
}
