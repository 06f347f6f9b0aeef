//! Laplacians, a deterministic dense symmetric eigensolver, and the graph
//! Fourier transform.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{shape_err, Error, Result};
use crate::graph::{degree_matrix, Graph, GraphSignal};

const MAX_SWEEPS: usize = 100;
const CONVERGENCE_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-10;
const SIGN_THRESHOLD: f64 = 1e-12;

/// Orthonormal eigenbasis of a symmetric matrix. Eigenvalues ascend and
/// column `l` of `eigenvectors` pairs with `eigenvalues[l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    pub eigenvalues: Array1<f64>,
    pub eigenvectors: Array2<f64>,
}

impl SpectralBasis {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Basis of the one-node graph.
    pub fn singleton() -> Self {
        Self {
            eigenvalues: Array1::zeros(1),
            eigenvectors: Array2::ones((1, 1)),
        }
    }

    /// Smallest gap between consecutive eigenvalues (`inf` below two modes).
    pub fn min_gap(&self) -> f64 {
        self.eigenvalues
            .windows(2)
            .into_iter()
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Combinatorial Laplacian `L = D - A` as a dense matrix.
pub fn laplacian(g: &Graph) -> Array2<f64> {
    let mut l = g.adjacency().to_dense().mapv(|w| -w);
    for (i, d) in degree_matrix(g).iter().enumerate() {
        l[[i, i]] = *d;
    }
    l
}

/// Laplacian of a dense adjacency matrix.
pub fn laplacian_dense(a: &ArrayView2<f64>) -> Array2<f64> {
    let mut l = a.mapv(|w| -w);
    for (i, row) in a.axis_iter(Axis(0)).enumerate() {
        l[[i, i]] = row.sum() - a[[i, i]];
    }
    l
}

/// Symmetric-normalised Laplacian `I - D^{-1/2} A D^{-1/2}` of a dense
/// adjacency without isolated nodes.
pub fn normalized_laplacian_dense(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let inv_sqrt: Vec<f64> = a
        .axis_iter(Axis(0))
        .map(|r| {
            let d = r.sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let v = -a[[i, j]] * inv_sqrt[i] * inv_sqrt[j];
        if i == j {
            1.0 + v
        } else {
            v
        }
    })
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn off_diagonal_norm(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[[i, j]] * a[[i, j]];
            }
        }
    }
    s.sqrt()
}

/// Flips each column so that its first entry with magnitude above `1e-12`
/// is positive.
fn fix_signs(v: &mut Array2<f64>) {
    for mut col in v.axis_iter_mut(Axis(1)) {
        if let Some(&first) = col.iter().find(|x| x.abs() > SIGN_THRESHOLD) {
            if first < 0.0 {
                col.mapv_inplace(|x| -x);
            }
        }
    }
}

fn lex_cmp(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Eigendecomposition of a dense symmetric matrix by cyclic Jacobi rotations.
///
/// Stops once the off-diagonal Frobenius norm falls below `1e-12 * ‖L‖_F`,
/// failing after 100 sweeps. Output is sorted ascending by eigenvalue (ties
/// broken by lexicographic order of the sign-fixed eigenvectors) and every
/// column is sign-normalised, so identical input gives bit-identical output.
pub fn eig_sym(l: &Array2<f64>) -> Result<SpectralBasis> {
    let n = l.nrows();
    if l.ncols() != n {
        return Err(shape_err(format!("{n}x{n}"), format!("{n}x{}", l.ncols())));
    }
    let scale = l.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            asym = asym.max((l[[i, j]] - l[[j, i]]).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }
    if n == 1 {
        return Ok(SpectralBasis {
            eigenvalues: Array1::from_elem(1, l[[0, 0]]),
            eigenvectors: Array2::ones((1, 1)),
        });
    }

    let mut a = l.clone();
    // symmetrise exactly so rotations act on a truly symmetric matrix
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = m;
            a[[j, i]] = m;
        }
    }
    let mut v = Array2::<f64>::eye(n);
    let target = CONVERGENCE_TOL * frobenius(&a);

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= target {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                a[[p, p]] = app - t * apq;
                a[[q, q]] = aqq + t * apq;
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        let off_norm = off_diagonal_norm(&a);
        if off_norm > target {
            return Err(Error::NoConvergence {
                sweeps: MAX_SWEEPS,
                off_norm,
            });
        }
    }

    fix_signs(&mut v);
    let diag = a.diag().to_owned();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        diag[i]
            .total_cmp(&diag[j])
            .then_with(|| lex_cmp(v.column(i), v.column(j)))
    });
    let eigenvalues = order.iter().map(|&i| diag[i]).collect();
    let eigenvectors = v.select(Axis(1), &order);
    Ok(SpectralBasis {
        eigenvalues,
        eigenvectors,
    })
}

/// Graph Fourier transform `Uᵀx`, applied column-wise.
pub fn gft(x: &GraphSignal, b: &SpectralBasis) -> Result<Array2<f64>> {
    if x.nrows() != b.dim() {
        return Err(shape_err(format!("{} rows", b.dim()), format!("{} rows", x.nrows())));
    }
    Ok(b.eigenvectors.t().dot(x))
}

/// Inverse transform `U x̂`.
pub fn igft(xhat: &Array2<f64>, b: &SpectralBasis) -> Result<GraphSignal> {
    if xhat.nrows() != b.dim() {
        return Err(shape_err(
            format!("{} rows", b.dim()),
            format!("{} rows", xhat.nrows()),
        ));
    }
    Ok(b.eigenvectors.dot(xhat))
}

/// Quadratic form `xᵀ L x`.
pub fn smoothness(x: &ArrayView1<f64>, l: &Array2<f64>) -> Result<f64> {
    if x.len() != l.nrows() {
        return Err(shape_err(format!("length {}", l.nrows()), format!("length {}", x.len())));
    }
    Ok(x.dot(&l.dot(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SparseAdjacency;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::from_unit_edges(n, edges, Array2::zeros((n, 1))).unwrap()
    }

    fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Graph {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(p) {
                    edges.push((i, j, rng.gen_range(0.2..2.0)));
                }
            }
        }
        Graph::structure_only(SparseAdjacency::from_edges(n, edges).unwrap())
    }

    fn max_abs(a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_basis(l: &Array2<f64>, b: &SpectralBasis) {
        let n = l.nrows();
        let u = &b.eigenvectors;
        assert!(max_abs(&(u.t().dot(u) - Array2::<f64>::eye(n))) <= 1e-8);
        let recon = u.dot(&Array2::from_diag(&b.eigenvalues)).dot(&u.t());
        assert!(max_abs(&(recon - l)) <= 1e-8 * max_abs(l).max(1.0));
        for w in b.eigenvalues.windows(2) {
            assert!(w[0] <= w[1]);
        }
        for col in u.axis_iter(Axis(1)) {
            let first = col.iter().find(|x| x.abs() > 1e-12).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn laplacian_examples() {
        assert_eq!(laplacian(&unit_graph(2, &[(0, 1)])), array![[1.0, -1.0], [-1.0, 1.0]]);
        let k3 = laplacian(&unit_graph(3, &[(0, 1), (1, 2), (0, 2)]));
        assert_eq!(
            k3,
            array![[2.0, -1.0, -1.0], [-1.0, 2.0, -1.0], [-1.0, -1.0, 2.0]]
        );
        assert_eq!(laplacian(&unit_graph(3, &[])), Array2::<f64>::zeros((3, 3)));
    }

    #[test]
    fn p2_spectrum() {
        let b = eig_sym(&laplacian(&unit_graph(2, &[(0, 1)]))).unwrap();
        let r = 0.5f64.sqrt();
        assert!((b.eigenvalues[0]).abs() < 1e-15);
        assert!((b.eigenvalues[1] - 2.0).abs() < 1e-15);
        assert!((b.eigenvectors[[0, 0]] - r).abs() < 1e-15);
        assert!((b.eigenvectors[[1, 0]] - r).abs() < 1e-15);
        assert!((b.eigenvectors[[0, 1]] - r).abs() < 1e-15);
        assert!((b.eigenvectors[[1, 1]] + r).abs() < 1e-15);
    }

    #[test]
    fn k3_spectrum() {
        let l = laplacian(&unit_graph(3, &[(0, 1), (1, 2), (0, 2)]));
        let b = eig_sym(&l).unwrap();
        for (got, want) in b.eigenvalues.iter().zip([0.0, 3.0, 3.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        check_basis(&l, &b);
    }

    #[test]
    fn random_symmetric_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = Array2::from_shape_fn((8, 8), |_| rng.gen_range(-1.0..1.0));
        let s = &m + &m.t();
        check_basis(&s, &eig_sym(&s).unwrap());
    }

    #[test]
    fn rejects_asymmetric_and_non_square() {
        assert!(matches!(
            eig_sym(&array![[1.0, 2.0], [0.0, 1.0]]),
            Err(Error::NotSymmetric(_))
        ));
        assert!(eig_sym(&Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn zero_and_singleton_matrices() {
        let b = eig_sym(&Array2::zeros((4, 4))).unwrap();
        assert_eq!(b.eigenvalues.to_vec(), vec![0.0; 4]);
        check_basis(&Array2::zeros((4, 4)), &b);
        assert_eq!(eig_sym(&Array2::zeros((1, 1))).unwrap(), SpectralBasis::singleton());
    }

    #[test]
    fn deterministic_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let l = laplacian(&random_graph(20, 0.3, &mut rng));
        assert_eq!(eig_sym(&l).unwrap(), eig_sym(&l).unwrap());
    }

    #[test]
    fn zero_multiplicity_counts_components() {
        // triangle + path of three + isolated node: three components
        let g = unit_graph(7, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5)]);
        let b = eig_sym(&laplacian(&g)).unwrap();
        let zeros = b.eigenvalues.iter().filter(|v| v.abs() < 1e-8).count();
        assert_eq!(zeros, 3);
        assert!(b.eigenvalues[0].abs() < 1e-8);
    }

    #[test]
    fn gft_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // a path keeps the graph connected
        let n = 6;
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let g = unit_graph(n, &edges);
        let b = eig_sym(&laplacian(&g)).unwrap();

        let c = Array2::from_elem((n, 1), 2.5);
        let xhat = gft(&c, &b).unwrap();
        assert!((xhat[[0, 0]] - 2.5 * (n as f64).sqrt()).abs() < 1e-12);
        assert!(xhat.iter().skip(1).all(|v| v.abs() < 1e-12));

        let u2 = b.eigenvectors.column(1).to_owned().insert_axis(Axis(1));
        let coeffs = gft(&u2, &b).unwrap();
        for (l, v) in coeffs.iter().enumerate() {
            let want = if l == 1 { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-12);
        }

        let mut e1 = Array2::zeros((n, 1));
        e1[[0, 0]] = 1.0;
        let x = igft(&e1, &b).unwrap();
        assert!(x.iter().all(|v| (v - 1.0 / (n as f64).sqrt()).abs() < 1e-12));
        assert_eq!(igft(&Array2::zeros((n, 2)), &b).unwrap(), Array2::<f64>::zeros((n, 2)));

        let sig = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-1.0..1.0));
        assert!(gft(&Array2::zeros((n + 1, 1)), &b).is_err());
        assert!(igft(&sig.slice(ndarray::s![..n - 1, ..]).to_owned(), &b).is_err());
    }

    #[test]
    fn smoothness_examples() {
        let p2 = unit_graph(2, &[(0, 1)]);
        let l = laplacian(&p2);
        assert_eq!(smoothness(&array![1.0, 0.0].view(), &l).unwrap(), 1.0);
        assert_eq!(smoothness(&array![4.0, 4.0].view(), &l).unwrap(), 0.0);
        assert!(smoothness(&array![1.0].view(), &l).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_graph(9, 0.4, &mut rng);
        let l = laplacian(&g);
        let b = eig_sym(&l).unwrap();
        for (k, col) in b.eigenvectors.axis_iter(Axis(1)).enumerate() {
            assert!((smoothness(&col, &l).unwrap() - b.eigenvalues[k]).abs() < 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn transform_round_trip_and_parseval(n in 1usize..50, seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(n, 0.2, &mut rng);
            let b = eig_sym(&laplacian(&g)).unwrap();
            let x = Array2::from_shape_fn((n, 2), |_| rng.gen_range(-3.0..3.0));
            let xhat = gft(&x, &b).unwrap();
            let back = igft(&xhat, &b).unwrap();
            prop_assert!(max_abs(&(back - &x)) <= 1e-9);
            let ex: f64 = x.iter().map(|v| v * v).sum();
            let eh: f64 = xhat.iter().map(|v| v * v).sum();
            prop_assert!((ex.sqrt() - eh.sqrt()).abs() <= 1e-9 * (1.0 + ex.sqrt()));
        }

        #[test]
        fn smoothness_matches_edge_sum(n in 2usize..20, seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(n, 0.3, &mut rng);
            let x: Array1<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = g.adjacency().to_dense();
            let mut want = 0.0;
            for i in 0..n {
                for j in 0..n {
                    want += 0.5 * a[[i, j]] * (x[i] - x[j]).powi(2);
                }
            }
            let got = smoothness(&x.view(), &laplacian(&g)).unwrap();
            prop_assert!((got - want).abs() <= 1e-10 * (1.0 + want));
        }

        #[test]
        fn laplacian_bases_satisfy_invariants(n in 2usize..30, seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(n, 0.3, &mut rng);
            let l = laplacian(&g);
            let b = eig_sym(&l).unwrap();
            check_basis(&l, &b);
            prop_assert!(b.eigenvalues[0].abs() <= 1e-8);
            prop_assert!(b.eigenvalues.iter().all(|&v| v >= -1e-9));
        }
    }
}
