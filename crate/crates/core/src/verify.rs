//! Randomized property checks for the pooling filterbank and the model.
//!
//! Every check draws its instance from a ChaCha8 stream, so a failure is
//! reproduced by its instance seed alone.

use std::collections::VecDeque;
use std::fmt;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coarsening::{coarsen, Partition};
use crate::eigenpool::{build_bank, PoolingBank};
use crate::error::Result;
use crate::gnn::{preprocess, Activation, EigenGcnModel, ModelConfig, ModelKind, PreprocessConfig};
use crate::graph::{permute, Graph, SparseAdjacency};

/// Tolerance of the filterbank identities.
pub const FILTERBANK_TOL: f64 = 1e-8;
/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;
/// Largest accepted relative gradient error.
pub const FD_REL_TOL: f64 = 1e-3;
/// Denominator floor of the relative gradient error, so that entries whose
/// true gradient is zero are compared absolutely.
pub const FD_FLOOR: f64 = 1e-5;
/// Largest accepted logit difference under node relabelling.
pub const PERMUTATION_TOL: f64 = 1e-6;
/// Smallest subgraph eigenvalue gap admitted to the permutation check.
pub const MIN_SPECTRAL_GAP: f64 = 1e-6;

/// Erdős–Rényi graph with optional random weights in `[0.5, 2)` and
/// features uniform in `[-1, 1)`.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64, d: usize, weighted: bool) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                let w = if weighted { rng.gen_range(0.5..2.0) } else { 1.0 };
                edges.push((i, j, w));
            }
        }
    }
    let adj = SparseAdjacency::from_edges(n, edges).expect("generated edges are valid");
    let x = Array2::from_shape_simple_fn((n, d), || rng.gen_range(-1.0..1.0));
    Graph::new(adj, x, None).expect("one feature row per node")
}

/// Partition into connected regions grown breadth-first from `k` random
/// seeds. Nodes no seed can reach start regions of their own.
pub fn random_connected_partition(rng: &mut ChaCha8Rng, adj: &SparseAdjacency, k: usize) -> Partition {
    let n = adj.n();
    let mut label = vec![usize::MAX; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut queue = VecDeque::new();
    let mut next = 0;
    for &s in order.iter().take(k.clamp(1, n)) {
        label[s] = next;
        queue.push_back(s);
        next += 1;
    }
    let grow = |queue: &mut VecDeque<usize>, label: &mut Vec<usize>, rng: &mut ChaCha8Rng| {
        while let Some(v) = queue.pop_front() {
            let mut nbrs: Vec<usize> = adj.row(v).map(|(j, _)| j).filter(|&j| label[j] == usize::MAX).collect();
            nbrs.shuffle(rng);
            for j in nbrs {
                if label[j] == usize::MAX {
                    label[j] = label[v];
                    queue.push_back(j);
                }
            }
        }
    };
    grow(&mut queue, &mut label, rng);
    for v in order {
        if label[v] == usize::MAX {
            label[v] = next;
            next += 1;
            queue.push_back(v);
            grow(&mut queue, &mut label, rng);
        }
    }
    Partition::from_labels(&label)
}

/// A graph with a random connected partition, as used by the filterbank
/// checks: `n ≤ 30`, edge probability 0.3, `d ≤ 4`.
#[derive(Debug, Clone)]
pub struct FilterbankInstance {
    pub seed: u64,
    pub graph: Graph,
    pub partition: Partition,
}

impl FilterbankInstance {
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=30);
        let d = rng.gen_range(1..=4);
        let graph = random_graph(&mut rng, n, 0.3, d, false);
        let k = rng.gen_range(1..=n.div_ceil(3));
        let partition = random_connected_partition(&mut rng, graph.adjacency(), k);
        Self { seed, graph, partition }
    }

    pub fn bank(&self) -> Result<PoolingBank> {
        let view = coarsen(&self.graph, &self.partition)?;
        build_bank(&view, view.partition.n_max())
    }
}

impl fmt::Display for FilterbankInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "seed {} (n={}, edges={}, d={}, subgraphs={})",
            self.seed,
            self.graph.n(),
            self.graph.adjacency().num_edges(),
            self.graph.feature_dim(),
            self.partition.num_subgraphs()
        )
    }
}

/// Deliberate corruption used to confirm that the checks can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Negate the first eigenvector of the largest subgraph in the bank used
    /// for reconstruction, after pooling with the intact bank.
    FlipThetaSign,
}

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn energy(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// `‖x − reconstruct(pool(x))‖_max / (1 + ‖x‖_max)` with all `n_max`
/// operators.
pub fn reconstruction_error(inst: &FilterbankInstance, fault: Fault) -> Result<f64> {
    let bank = inst.bank()?;
    let x = inst.graph.features();
    let pooled = bank.pool(x)?;
    let rebuild = match fault {
        Fault::None => bank,
        Fault::FlipThetaSign => {
            let mut bad = bank.clone();
            let k = (0..bad.num_subgraphs())
                .max_by_key(|&k| (bad.bases[k].dim(), usize::MAX - k))
                .expect("at least one subgraph");
            bad.bases[k].eigenvectors.column_mut(0).mapv_inplace(|v| -v);
            bad
        }
    };
    let back = rebuild.reconstruct(&pooled, rebuild.h)?;
    Ok(max_abs(&(&back - x)) / (1.0 + max_abs(x)))
}

/// `‖MᵀM − I‖_max` over the nonzero columns `M` of `[Θ_1 … Θ_{n_max}]`.
pub fn orthogonality_error(inst: &FilterbankInstance) -> Result<f64> {
    let bank = inst.bank()?;
    let mut cols = Vec::new();
    for theta in bank.operators() {
        for c in theta.axis_iter(Axis(1)) {
            if c.iter().any(|&v| v != 0.0) {
                cols.push(c.to_owned());
            }
        }
    }
    let views: Vec<_> = cols.iter().map(|c| c.view()).collect();
    let m = ndarray::stack(Axis(1), &views).expect("columns share length");
    let gram = m.t().dot(&m);
    Ok(max_abs(&(gram - Array2::<f64>::eye(cols.len()))))
}

/// `|‖pool(x)‖² − ‖x‖²| / ‖x‖²` with all `n_max` operators.
pub fn energy_error(inst: &FilterbankInstance) -> Result<f64> {
    let bank = inst.bank()?;
    let x = inst.graph.features();
    let total = energy(x);
    if total == 0.0 {
        return Ok(energy(&bank.pool(x)?));
    }
    Ok((energy(&bank.pool(x)?) - total).abs() / total)
}

/// Worst violation of the truncated energy identity: the reported ratio
/// against `‖reconstruct(pool(x), h)‖²/‖x‖²`, monotonicity in `h`, and the
/// ratio at `h = n_max` against 1.
pub fn local_parseval_error(inst: &FilterbankInstance) -> Result<f64> {
    let bank = inst.bank()?;
    let x = inst.graph.features();
    let total = energy(x);
    let pooled = bank.pool(x)?;
    let mut worst: f64 = 0.0;
    let mut prev = 0.0;
    for h in 1..=bank.n_max {
        let ratio = bank.energy_ratio(x, h)?;
        let direct = if total == 0.0 {
            1.0
        } else {
            energy(&bank.reconstruct(&pooled, h)?) / total
        };
        worst = worst.max((ratio - direct).abs());
        worst = worst.max(prev - ratio);
        prev = ratio;
    }
    Ok(worst.max((prev - 1.0).abs()))
}

/// Small model and graph for the finite-difference check.
#[derive(Debug, Clone)]
pub struct GradientInstance {
    pub seed: u64,
    pub graph: Graph,
    pub label: usize,
    pub kind: ModelKind,
}

impl GradientInstance {
    pub fn generate(seed: u64, kind: ModelKind) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(4..=8);
        let graph = random_graph(&mut rng, n, 0.5, 2, true);
        let label = rng.gen_range(0..3);
        Self { seed, graph, label, kind }
    }

    fn config(&self) -> (ModelConfig, PreprocessConfig) {
        let model = ModelConfig {
            kind: self.kind,
            widths: vec![5, 4],
            pool_h: 2,
            head_hidden: vec![6],
            activation: Activation::Relu,
        };
        let pre = PreprocessConfig {
            levels: 2,
            pool_h: 2,
            pooling_ratio: 3,
            seed: self.seed,
            canonical: false,
        };
        (model, pre)
    }
}

/// Largest relative error between analytic and central-difference
/// gradients over every parameter, `|a − f| / max(|a|, |f|, FD_FLOOR)`.
/// Returns `None` when some ReLU input lies too close to zero for central
/// differences to be meaningful.
pub fn gradient_error(inst: &GradientInstance) -> Result<Option<f64>> {
    let (model_cfg, pre) = inst.config();
    let pg = match inst.kind {
        ModelKind::EigenGcn => preprocess(&inst.graph, &pre)?,
        ModelKind::FlatGcn => crate::gnn::preprocess_flat(&inst.graph)?,
    };
    let m = EigenGcnModel::new(model_cfg, inst.graph.feature_dim(), 3, inst.seed)?;
    let x = inst.graph.features();
    if m.activation_margin(&pg, x)? < 1e-3 {
        return Ok(None);
    }
    let (_, grads) = m.loss_and_grad(&pg, x, inst.label)?;
    let mut probe = m.clone();
    let mut worst: f64 = 0.0;
    for t in 0..grads.tensors().len() {
        let (rows, cols) = grads.tensors()[t].dim();
        for idx in (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))) {
            let orig = m.params.tensors()[t][idx];
            probe.params.tensors_mut()[t][idx] = orig + FD_STEP;
            let up = probe.loss(&pg, x, inst.label)?;
            probe.params.tensors_mut()[t][idx] = orig - FD_STEP;
            let down = probe.loss(&pg, x, inst.label)?;
            probe.params.tensors_mut()[t][idx] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = grads.tensors()[t][idx];
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(Some(worst))
}

/// Weighted random graph, preprocessing and model for the relabelling check.
#[derive(Debug, Clone)]
pub struct PermutationInstance {
    pub seed: u64,
    pub graph: Graph,
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
}

impl PermutationInstance {
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(6..=24);
        let graph = random_graph(&mut rng, n, 0.3, 3, true);
        let levels = rng.gen_range(2..=3);
        let preprocess = PreprocessConfig {
            levels,
            pool_h: 3,
            seed,
            canonical: true,
            ..Default::default()
        };
        let model = ModelConfig {
            widths: vec![8; levels],
            head_hidden: vec![8],
            ..Default::default()
        };
        Self {
            seed,
            graph,
            preprocess,
            model,
        }
    }

    /// Whether every subgraph Laplacian at every level has all eigenvalue
    /// gaps above [`MIN_SPECTRAL_GAP`].
    pub fn is_nondegenerate(&self) -> Result<bool> {
        Ok(preprocess(&self.graph, &self.preprocess)?.min_spectral_gap()? > MIN_SPECTRAL_GAP)
    }
}

/// Largest logit difference between the graph and `permutations` random
/// relabellings of it.
pub fn permutation_error(inst: &PermutationInstance, permutations: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(inst.seed ^ 0x5eed);
    let m = EigenGcnModel::new(inst.model.clone(), inst.graph.feature_dim(), 4, inst.seed)?;
    let base = m.logits(&preprocess(&inst.graph, &inst.preprocess)?, inst.graph.features())?;
    let mut worst: f64 = 0.0;
    for _ in 0..permutations {
        let mut p: Vec<usize> = (0..inst.graph.n()).collect();
        p.shuffle(&mut rng);
        let gp = permute(&inst.graph, &p)?;
        let logits = m.logits(&preprocess(&gp, &inst.preprocess)?, gp.features())?;
        worst = worst.max((&logits - &base).iter().fold(0.0, |a, v| a.max(v.abs())));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Property {
    Reconstruction,
    Orthogonality,
    Energy,
    LocalParseval,
    Gradient,
    Permutation,
}

impl Property {
    pub const ALL: [Property; 6] = [
        Property::Reconstruction,
        Property::Orthogonality,
        Property::Energy,
        Property::LocalParseval,
        Property::Gradient,
        Property::Permutation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Property::Reconstruction => "reconstruction",
            Property::Orthogonality => "orthogonality",
            Property::Energy => "energy",
            Property::LocalParseval => "local-parseval",
            Property::Gradient => "gradient",
            Property::Permutation => "permutation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyTally {
    pub property: Property,
    pub passed: usize,
    pub total: usize,
    /// Largest error seen across instances.
    pub worst: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub property: Property,
    pub instance: String,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub tallies: Vec<PropertyTally>,
    pub first_failure: Option<Failure>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.first_failure.is_none() && self.tallies.iter().all(|t| t.passed == t.total && t.total > 0)
    }

    pub fn tally(&self, p: Property) -> &PropertyTally {
        self.tallies.iter().find(|t| t.property == p).expect("every property is tallied")
    }
}

/// Instance seed `i` of a suite run with `seed`.
pub fn instance_seed(seed: u64, i: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i)
}

/// Runs every property over `instances` instances each. Gradient checks
/// alternate between the pooled and the flat model; instances rejected for
/// ReLU kinks or degenerate spectra are replaced by fresh seeds.
pub fn run_suite(seed: u64, instances: usize, fault: Fault) -> Result<SuiteReport> {
    let mut tallies: Vec<PropertyTally> = Property::ALL
        .iter()
        .map(|&property| PropertyTally {
            property,
            passed: 0,
            total: 0,
            worst: 0.0,
        })
        .collect();
    let mut first_failure = None;
    let mut record = |p: Property, err: f64, tol: f64, label: &dyn Fn() -> String| {
        let t = &mut tallies[Property::ALL.iter().position(|&q| q == p).expect("known property")];
        t.total += 1;
        t.worst = t.worst.max(err);
        if err <= tol {
            t.passed += 1;
        } else if first_failure.is_none() {
            first_failure = Some(Failure {
                property: p,
                instance: label(),
                error: err,
            });
        }
    };

    for i in 0..instances as u64 {
        let inst = FilterbankInstance::generate(instance_seed(seed, i));
        let label = || inst.to_string();
        record(Property::Reconstruction, reconstruction_error(&inst, fault)?, FILTERBANK_TOL, &label);
        record(Property::Orthogonality, orthogonality_error(&inst)?, FILTERBANK_TOL, &label);
        record(Property::Energy, energy_error(&inst)?, FILTERBANK_TOL, &label);
        record(Property::LocalParseval, local_parseval_error(&inst)?, FILTERBANK_TOL, &label);
    }

    let mut draw = 0u64;
    let mut done = 0;
    while done < instances {
        let kind = if done % 2 == 0 { ModelKind::EigenGcn } else { ModelKind::FlatGcn };
        let inst = GradientInstance::generate(instance_seed(seed ^ 0x6ad, draw), kind);
        draw += 1;
        if let Some(err) = gradient_error(&inst)? {
            let label = || format!("seed {} ({:?}, n={})", inst.seed, inst.kind, inst.graph.n());
            record(Property::Gradient, err, FD_REL_TOL, &label);
            done += 1;
        }
    }

    let mut draw = 0u64;
    let mut done = 0;
    while done < instances {
        let inst = PermutationInstance::generate(instance_seed(seed ^ 0x9e7, draw));
        draw += 1;
        if inst.is_nondegenerate()? {
            let label = || format!("seed {} (n={}, levels={})", inst.seed, inst.graph.n(), inst.preprocess.levels);
            record(Property::Permutation, permutation_error(&inst, 20)?, PERMUTATION_TOL, &label);
            done += 1;
        }
    }

    Ok(SuiteReport { tallies, first_failure })
}
