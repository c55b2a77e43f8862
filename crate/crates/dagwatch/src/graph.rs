//! Weighted graphs over stream coordinates and the smooth acyclicity machinery.
//!
//! A [`WeightedGraph`] stores a dense d x d coefficient matrix where entry
//! `(j, i)` is the weight of edge `j -> i` (row = parent, column = child) and
//! the diagonal is identically zero.  Binarization is by magnitude threshold:
//! `|w| > edge_threshold`, strictly.
//!
//! Cyclicity is measured by the smooth penalty
//!
//! ```text
//! h(W) = tr(exp(W o W)) - d        (o = entrywise product)
//! ```
//!
//! which is zero exactly on matrices whose support is acyclic and positive
//! otherwise, with gradient `grad h(W) = exp(W o W)^T o 2W`.  A separate
//! topological-sort check ([`is_dag`]) gives an independent combinatorial
//! route to the same question; the two must agree and tests hold them to it.

use nalgebra::DMatrix;

use crate::expm::matrix_exponential;
use crate::{Error, Result};

/// Numerical tolerance under which the acyclicity penalty counts as zero.
pub const DEFAULT_H_TOL: f64 = 1e-8;

/// Direction of a structural transition on one edge slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    /// The edge appeared.
    Added,
    /// The edge disappeared.
    Deleted,
}

/// Fallback binarization threshold when no ground-truth weight scale is known.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.3;

/// Dense weighted digraph with a zero diagonal and a binarization threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    weights: DMatrix<f64>,
    edge_threshold: f64,
}

impl WeightedGraph {
    /// Wraps a weight matrix, validating squareness, finiteness, a zero
    /// diagonal, and a non-negative finite threshold.
    pub fn new(weights: DMatrix<f64>, edge_threshold: f64) -> Result<Self> {
        if weights.nrows() != weights.ncols() {
            return Err(Error::invalid(format!(
                "weight matrix must be square, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("weight matrix has non-finite entries"));
        }
        for i in 0..weights.nrows() {
            if weights[(i, i)] != 0.0 {
                return Err(Error::invalid(format!(
                    "weight matrix diagonal must be zero, entry ({i}, {i}) is {}",
                    weights[(i, i)]
                )));
            }
        }
        if !(edge_threshold.is_finite() && edge_threshold >= 0.0) {
            return Err(Error::invalid(format!(
                "edge threshold must be finite and non-negative, got {edge_threshold}"
            )));
        }
        Ok(Self { weights, edge_threshold })
    }

    /// Edgeless graph on `d` nodes.
    pub fn zeros(d: usize, edge_threshold: f64) -> Self {
        Self {
            weights: DMatrix::zeros(d, d),
            edge_threshold,
        }
    }

    /// Number of nodes.
    pub fn d(&self) -> usize {
        self.weights.nrows()
    }

    /// Coefficient of edge `parent -> child` (zero when absent).
    pub fn weight(&self, parent: usize, child: usize) -> f64 {
        self.weights[(parent, child)]
    }

    /// Sets the coefficient of `parent -> child`; the diagonal stays off limits.
    pub fn set_weight(&mut self, parent: usize, child: usize, value: f64) -> Result<()> {
        if parent == child {
            return Err(Error::invalid("cannot set a self-loop weight"));
        }
        if !value.is_finite() {
            return Err(Error::invalid("edge weight must be finite"));
        }
        self.weights[(parent, child)] = value;
        Ok(())
    }

    /// The underlying weight matrix.
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Consumes the graph, returning the weight matrix.
    pub fn into_weights(self) -> DMatrix<f64> {
        self.weights
    }

    /// Binarization threshold.
    pub fn edge_threshold(&self) -> f64 {
        self.edge_threshold
    }

    /// Smooth acyclicity penalty of the weight matrix.
    pub fn acyclicity_value(&self) -> Result<f64> {
        acyclicity_value(&self.weights)
    }

    /// Thresholded adjacency (strict `|w| > edge_threshold`).
    pub fn threshold_edges(&self) -> AdjacencyMatrix {
        threshold_edges(self)
    }
}

/// Binary adjacency pattern; `(parent, child)` mirrors [`WeightedGraph`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    d: usize,
    present: Vec<bool>, // row-major: parent * d + child
}

impl AdjacencyMatrix {
    /// Empty pattern on `d` nodes.
    pub fn new(d: usize) -> Self {
        Self { d, present: vec![false; d * d] }
    }

    /// Number of nodes.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Whether edge `parent -> child` is present.
    pub fn get(&self, parent: usize, child: usize) -> bool {
        self.present[parent * self.d + child]
    }

    /// Adds or removes edge `parent -> child`.  Self-loops are ignored.
    pub fn set(&mut self, parent: usize, child: usize, present: bool) {
        if parent != child {
            self.present[parent * self.d + child] = present;
        }
    }

    /// Total number of edges.
    pub fn edge_count(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    /// All `(parent, child)` pairs in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for p in 0..self.d {
            for c in 0..self.d {
                if self.get(p, c) {
                    out.push((p, c));
                }
            }
        }
        out
    }

    /// Parents of `child`, ascending.
    pub fn parents(&self, child: usize) -> Vec<usize> {
        (0..self.d).filter(|&p| self.get(p, child)).collect()
    }
}

/// Entrywise difference between two adjacency patterns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuralDelta {
    d: usize,
    entries: Vec<i8>, // -1 removed, 0 unchanged, +1 added; parent * d + child
    change_count: usize,
}

impl StructuralDelta {
    /// Number of nodes.
    pub fn d(&self) -> usize {
        self.d
    }

    /// -1 (edge removed), 0 (unchanged), or +1 (edge added) at `(parent, child)`.
    pub fn get(&self, parent: usize, child: usize) -> i8 {
        self.entries[parent * self.d + child]
    }

    /// Number of entries that changed in either direction.
    pub fn change_count(&self) -> usize {
        self.change_count
    }
}

/// h(W) = tr(exp(W o W)) - d for any square matrix.
pub fn acyclicity_value(weights: &DMatrix<f64>) -> Result<f64> {
    penalty_and_exponential(weights).map(|(h, _)| h)
}

/// Gradient of the acyclicity penalty: `exp(W o W)^T o 2W`.
pub fn acyclicity_gradient(weights: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    acyclicity_with_curvature(weights).map(|(_, g, _)| g)
}

/// Penalty and gradient from a single exponential evaluation.
pub fn acyclicity_with_gradient(weights: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    acyclicity_with_curvature(weights).map(|(h, g, _)| (h, g))
}

/// Penalty, gradient, and the per-entry factor `kappa = exp(W o W)^T`, all
/// from one exponential evaluation.  `kappa` is entrywise nonnegative, the
/// gradient is `2 W o kappa`, and `2 kappa[(i, j)]` is the second derivative
/// of the penalty in `w[(i, j)]` at entries where the weight is zero — the
/// solver uses it to scale each coordinate's step by its own stiffness.
pub fn acyclicity_with_curvature(
    weights: &DMatrix<f64>,
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>)> {
    let (h, e) = penalty_and_exponential(weights)?;
    let kappa = e.transpose();
    let grad = DMatrix::from_fn(weights.nrows(), weights.ncols(), |i, j| {
        2.0 * weights[(i, j)] * kappa[(i, j)]
    });
    Ok((h, grad, kappa))
}

fn penalty_and_exponential(weights: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    if weights.nrows() != weights.ncols() {
        return Err(Error::invalid("acyclicity penalty needs a square matrix"));
    }
    let d = weights.nrows();
    let squared = weights.component_mul(weights);
    let e = matrix_exponential(&squared)?;
    Ok((e.trace() - d as f64, e))
}

/// Binarizes a weighted graph: edge present iff `|w| > edge_threshold`, strictly.
pub fn threshold_edges(graph: &WeightedGraph) -> AdjacencyMatrix {
    let d = graph.d();
    let mut adj = AdjacencyMatrix::new(d);
    for p in 0..d {
        for c in 0..d {
            if p != c && graph.weight(p, c).abs() > graph.edge_threshold() {
                adj.set(p, c, true);
            }
        }
    }
    adj
}

/// Combinatorial acyclicity check by Kahn's algorithm.
///
/// Independent of the smooth penalty on purpose: the two routes cross-check
/// each other.
pub fn is_dag(adj: &AdjacencyMatrix) -> bool {
    topological_order(adj).is_some()
}

/// A topological order of the nodes (smallest index first among ties), or
/// `None` when the pattern has a cycle.
pub fn topological_order(adj: &AdjacencyMatrix) -> Option<Vec<usize>> {
    let d = adj.d();
    let mut indegree = vec![0usize; d];
    for p in 0..d {
        for c in 0..d {
            if adj.get(p, c) {
                indegree[c] += 1;
            }
        }
    }
    let mut order = Vec::with_capacity(d);
    let mut placed = vec![false; d];
    for _ in 0..d {
        // Deterministic tie-break: lowest ready index first.
        let next = (0..d).find(|&v| !placed[v] && indegree[v] == 0)?;
        placed[next] = true;
        order.push(next);
        for c in 0..d {
            if adj.get(next, c) {
                indegree[c] -= 1;
            }
        }
    }
    Some(order)
}

/// Finds one directed cycle, returned as its edge list, or `None` on a DAG.
///
/// Iterative DFS with children visited in index order, so the answer is
/// deterministic.
pub fn find_cycle(adj: &AdjacencyMatrix) -> Option<Vec<(usize, usize)>> {
    let d = adj.d();
    // 0 = unvisited, 1 = on current path, 2 = done
    let mut color = vec![0u8; d];
    let mut parent_of = vec![usize::MAX; d];

    for start in 0..d {
        if color[start] != 0 {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        color[start] = 1;
        while let Some(&mut (node, ref mut next_child)) = stack.last_mut() {
            let mut advanced = false;
            while *next_child < d {
                let child = *next_child;
                *next_child += 1;
                if !adj.get(node, child) {
                    continue;
                }
                if color[child] == 1 {
                    // Back edge: walk the path back from `node` to `child`.
                    let mut cycle = vec![(node, child)];
                    let mut cur = node;
                    while cur != child {
                        let par = parent_of[cur];
                        cycle.push((par, cur));
                        cur = par;
                    }
                    cycle.reverse();
                    return Some(cycle);
                }
                if color[child] == 0 {
                    color[child] = 1;
                    parent_of[child] = node;
                    stack.push((child, 0));
                    advanced = true;
                    break;
                }
            }
            if !advanced && stack.last().map(|&(n, c)| n == node && c >= d).unwrap_or(false) {
                color[node] = 2;
                stack.pop();
            }
        }
    }
    None
}

/// Removes edges until `adj` is acyclic: while a cycle exists, drop the
/// cycle edge with the smallest `magnitude(parent, child)` (ties broken by
/// edge position within the detected cycle).  Returns the dropped edges.
///
/// Terminates because every round removes one edge; deterministic because
/// cycle discovery and the tie-break are.
pub fn prune_cycles(
    adj: &mut AdjacencyMatrix,
    magnitude: impl Fn(usize, usize) -> f64,
) -> Vec<(usize, usize)> {
    let mut dropped = Vec::new();
    while let Some(cycle) = find_cycle(adj) {
        let mut weakest = cycle[0];
        let mut weakest_mag = magnitude(cycle[0].0, cycle[0].1);
        for &(p, c) in &cycle[1..] {
            let m = magnitude(p, c);
            if m < weakest_mag {
                weakest_mag = m;
                weakest = (p, c);
            }
        }
        adj.set(weakest.0, weakest.1, false);
        dropped.push(weakest);
    }
    dropped
}

/// Entrywise transition map between two patterns of the same dimension.
pub fn structural_delta(prev: &AdjacencyMatrix, now: &AdjacencyMatrix) -> Result<StructuralDelta> {
    if prev.d() != now.d() {
        return Err(Error::invalid(format!(
            "structural delta needs matching dimensions, got {} and {}",
            prev.d(),
            now.d()
        )));
    }
    let d = prev.d();
    let mut entries = vec![0i8; d * d];
    let mut change_count = 0;
    for p in 0..d {
        for c in 0..d {
            let before = prev.get(p, c);
            let after = now.get(p, c);
            let delta = match (before, after) {
                (false, true) => 1,
                (true, false) => -1,
                _ => 0,
            };
            if delta != 0 {
                change_count += 1;
            }
            entries[p * d + c] = delta;
        }
    }
    Ok(StructuralDelta { d, entries, change_count })
}
