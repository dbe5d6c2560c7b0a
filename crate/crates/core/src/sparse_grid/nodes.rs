//! Nested Leja nodes on `[-1, 1]` and barycentric Lagrange interpolation.

use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

/// Points closer than this to a node are treated as that node.
pub const NODE_SNAP: f64 = 1e-14;

const CANDIDATES: usize = 100_001;
/// Relative tolerance under which two candidate objectives count as a tie.
const TIE_TOL: f64 = 1e-12;

/// Prefix of a nested node sequence together with barycentric weights for
/// every prefix length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeFamily {
    nodes: Vec<f64>,
    /// `weights[l]` belongs to the prefix `ξ_0, …, ξ_l`.
    #[serde(skip)]
    weights: Vec<Vec<f64>>,
}

impl NodeFamily {
    pub fn from_nodes(nodes: Vec<f64>) -> Self {
        let weights = (0..nodes.len()).map(|l| barycentric_weights(&nodes[..=l])).collect();
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Nodes of level `l`, i.e. the first `l + 1` points.
    pub fn level(&self, l: usize) -> &[f64] {
        &self.nodes[..=l]
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        &self.weights[l]
    }

    /// Lagrange basis of level `l` at `c`, written into `out[..=l]`.
    pub fn basis(&self, l: usize, c: f64, out: &mut [f64]) {
        lagrange_basis(self.level(l), self.weights(l), c, &mut out[..=l]);
    }

    pub fn basis_derivative(&self, l: usize, c: f64, out: &mut [f64]) {
        lagrange_basis_derivative(self.level(l), self.weights(l), c, &mut out[..=l]);
    }

    /// Rebuilds cached weights after deserialization.
    pub fn rehydrate(self) -> Self {
        Self::from_nodes(self.nodes)
    }
}

struct LejaState {
    nodes: Vec<f64>,
    grid: Vec<f64>,
    /// Σ_i log|x − ξ_i| for every candidate.
    logsum: Vec<f64>,
}

impl LejaState {
    fn new() -> Self {
        let grid: Vec<f64> =
            (0..CANDIDATES).map(|i| (2.0 * i as f64 - (CANDIDATES - 1) as f64) / (CANDIDATES - 1) as f64).collect();
        let mut s = Self { nodes: Vec::new(), logsum: vec![0.0; CANDIDATES], grid };
        s.push(0.0);
        // the objective |ξ| ties at ±1; the sequence takes +1 first
        s.push(1.0);
        s
    }

    fn push(&mut self, xi: f64) {
        for (ls, &x) in self.logsum.iter_mut().zip(&self.grid) {
            *ls += (x - xi).abs().ln();
        }
        self.nodes.push(xi);
    }

    fn extend_to(&mut self, count: usize) {
        while self.nodes.len() < count {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (i, &v) in self.logsum.iter().enumerate() {
                // leftmost wins unless strictly better beyond the tie tolerance
                if v > best && (best == f64::NEG_INFINITY || v > best + TIE_TOL * best.abs().max(1.0)) {
                    best = v;
                    arg = i;
                }
            }
            assert!(best.is_finite(), "candidate grid exhausted after {} Leja nodes", self.nodes.len());
            let xi = self.grid[arg];
            self.push(xi);
        }
    }
}

/// First `count` Leja nodes: `ξ_0 = 0`, `ξ_1 = 1`, then greedy maximization of
/// `Π_i |ξ − ξ_i|` over a uniform grid of 100001 candidates with leftmost ties.
pub fn leja_nodes(count: usize) -> NodeFamily {
    static STATE: OnceLock<Mutex<LejaState>> = OnceLock::new();
    let count = count.max(1);
    let mut st = STATE.get_or_init(|| Mutex::new(LejaState::new())).lock().unwrap_or_else(|e| e.into_inner());
    st.extend_to(count);
    NodeFamily::from_nodes(st.nodes[..count].to_vec())
}

/// `ω_i = Π_{k≠i} 1 / (ξ_i − ξ_k)`.
pub fn barycentric_weights(nodes: &[f64]) -> Vec<f64> {
    nodes
        .iter()
        .enumerate()
        .map(|(i, &xi)| nodes.iter().enumerate().filter(|&(k, _)| k != i).fold(1.0, |acc, (_, &xk)| acc / (xi - xk)))
        .collect()
}

fn nearest_node(nodes: &[f64], c: f64) -> Option<usize> {
    nodes.iter().position(|&x| x == c || (c - x).abs() < NODE_SNAP)
}

/// Values `𝓛_i(c)` of every Lagrange basis function.
pub fn lagrange_basis(nodes: &[f64], weights: &[f64], c: f64, out: &mut [f64]) {
    if let Some(j) = nearest_node(nodes, c) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[j] = 1.0;
        return;
    }
    let mut s = 0.0;
    for i in 0..nodes.len() {
        out[i] = weights[i] / (c - nodes[i]);
        s += out[i];
    }
    out.iter_mut().for_each(|v| *v /= s);
}

/// Derivatives `𝓛_i'(c)`.
pub fn lagrange_basis_derivative(nodes: &[f64], weights: &[f64], c: f64, out: &mut [f64]) {
    let n = nodes.len();
    if n == 1 {
        out[0] = 0.0;
        return;
    }
    if let Some(j) = nearest_node(nodes, c) {
        // row j of the barycentric differentiation matrix
        let mut diag = 0.0;
        for i in 0..n {
            if i != j {
                out[i] = weights[i] / weights[j] / (nodes[j] - nodes[i]);
                diag -= out[i];
            }
        }
        out[j] = diag;
        return;
    }
    let mut l = vec![0.0; n];
    lagrange_basis(nodes, weights, c, &mut l);
    let s: f64 = (0..n).map(|k| l[k] / (c - nodes[k])).sum();
    // closest node gets its value from Σ 𝓛_i' = 0 to avoid cancellation
    let jn = (0..n).min_by(|&a, &b| (c - nodes[a]).abs().total_cmp(&(c - nodes[b]).abs())).unwrap_or(0);
    let mut rest = 0.0;
    for i in 0..n {
        if i != jn {
            out[i] = l[i] * (s - 1.0 / (c - nodes[i]));
            rest += out[i];
        }
    }
    out[jn] = -rest;
}

/// Barycentric interpolant of `values` at `c`.
pub fn interp_eval_1d(nodes: &[f64], weights: &[f64], values: &[f64], c: f64) -> f64 {
    let mut l = vec![0.0; nodes.len()];
    lagrange_basis(nodes, weights, c, &mut l);
    l.iter().zip(values).map(|(a, b)| a * b).sum()
}

/// Lower bound on the Lebesgue constant: `max Σ_i |𝓛_i(c)|` over 10⁴ + 1 points.
pub fn lebesgue_estimate(nodes: &[f64]) -> f64 {
    let w = barycentric_weights(nodes);
    let mut l = vec![0.0; nodes.len()];
    let m = 10_000;
    (0..=m)
        .map(|i| {
            let c = -1.0 + 2.0 * i as f64 / m as f64;
            lagrange_basis(nodes, &w, c, &mut l);
            l.iter().map(|v| v.abs()).sum::<f64>()
        })
        .fold(0.0, f64::max)
}
