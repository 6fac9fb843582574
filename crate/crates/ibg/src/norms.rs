//! Densifying weights, weighted Frobenius norms, brute-force cut norms and
//! the densifying cut similarity. These serve as oracles for the efficient
//! paths elsewhere in the crate.

use ndarray::Array2;

use crate::error::{IbgError, Result};
use crate::graph::DirectedGraphSignal;

/// Hard cap for the exhaustive cut-norm search (2^N subsets).
pub const CUT_NORM_MAX_N: usize = 20;

/// Densifying weight configuration. The implied N x N weight matrix has
/// entry e on non-edges and 1 on edges (q_ij = e + (1-e) a_ij); it is never
/// materialized.
#[derive(Debug, Clone, Copy)]
pub struct DensifyWeights {
    pub n: usize,
    pub e_count: usize,
    pub gamma: f64,
    /// Non-edge weight e = (Γ E / N²) / (1 - E / N²).
    pub e: f64,
    /// Σ_{ij} q_ij = e N² + (1-e) E = (1+Γ) E.
    pub sum_q: f64,
    /// μ = 1 / Σq.
    pub mu: f64,
}

impl DensifyWeights {
    /// Weight of dyad (i,j) given whether it carries an edge.
    pub fn q(&self, is_edge: bool) -> f64 {
        if is_edge {
            1.0
        } else {
            self.e
        }
    }
}

/// Build densifying weights for a graph with N nodes, E edges and negative
/// sample proportion Γ > 0. Requires 1 <= E < N².
pub fn densify_weights(n: usize, e_count: usize, gamma: f64) -> Result<DensifyWeights> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(IbgError::Validation(format!(
            "gamma must be positive and finite, got {gamma}"
        )));
    }
    let n2 = (n * n) as f64;
    if e_count == 0 || (e_count as f64) >= n2 {
        return Err(IbgError::Degenerate(format!(
            "need 1 <= E < N^2, got E={e_count}, N={n}"
        )));
    }
    let density = e_count as f64 / n2;
    let e = gamma * density / (1.0 - density);
    let sum_q = (1.0 + gamma) * e_count as f64;
    Ok(DensifyWeights {
        n,
        e_count,
        gamma,
        e,
        sum_q,
        mu: 1.0 / sum_q,
    })
}

/// Γ value at which the non-edge weight hits 1 (uniform weight limit).
pub fn uniform_limit_gamma(n: usize, e_count: usize) -> f64 {
    let density = e_count as f64 / (n * n) as f64;
    (1.0 - density) / density
}

/// (1/Σq) Σ_ij d_ij² q_ij for a dense difference matrix and dense weights.
pub fn weighted_frobenius_sq_dense(d: &Array2<f64>, q: &Array2<f64>) -> Result<f64> {
    if d.dim() != q.dim() {
        return Err(IbgError::Shape(format!(
            "difference {:?} vs weights {:?}",
            d.dim(),
            q.dim()
        )));
    }
    if d.iter().any(|v| !v.is_finite()) || q.iter().any(|v| !v.is_finite()) {
        return Err(IbgError::Validation("non-finite entry".into()));
    }
    let sum_q: f64 = q.sum();
    let num: f64 = d.iter().zip(q.iter()).map(|(&d, &q)| d * d * q).sum();
    Ok(num / sum_q)
}

/// Weighted squared Frobenius norm of (A - C) under the densifying weights of
/// the graph, computed naively in O(N²). Oracle for the efficient loss path.
pub fn weighted_frobenius_sq_residual(
    graph: &DirectedGraphSignal,
    c: &Array2<f64>,
    w: &DensifyWeights,
) -> Result<f64> {
    let n = graph.num_nodes();
    if c.dim() != (n, n) {
        return Err(IbgError::Shape(format!(
            "approximation is {:?}, graph has {n} nodes",
            c.dim()
        )));
    }
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let a = if graph.has_edge(i, j) { 1.0 } else { 0.0 };
            let d = a - c[[i, j]];
            acc += d * d * w.q(a == 1.0);
        }
    }
    Ok(acc * w.mu)
}

/// Plain signal mean-square norm (1/(N D)) Σ y².
pub fn signal_frobenius_sq(y: &Array2<f64>) -> f64 {
    let (n, d) = y.dim();
    if n == 0 || d == 0 {
        return 0.0;
    }
    y.iter().map(|&v| v * v).sum::<f64>() / (n * d) as f64
}

/// Exact weighted matrix cut norm by exhaustive search over row subsets U;
/// the column subset V is optimal in closed form given U. O(2^N N²), guarded.
pub fn exact_matrix_cut_norm(d: &Array2<f64>, q: &Array2<f64>) -> Result<f64> {
    let n = d.nrows();
    if d.dim() != q.dim() || d.ncols() != n {
        return Err(IbgError::Shape("cut norm needs matching square matrices".into()));
    }
    if n > CUT_NORM_MAX_N {
        return Err(IbgError::SizeGuard(format!(
            "exact cut norm limited to N <= {CUT_NORM_MAX_N}, got N={n}; use the similarity estimator"
        )));
    }
    let sum_q: f64 = q.sum();
    if sum_q <= 0.0 {
        return Err(IbgError::Degenerate("weight matrix sums to zero".into()));
    }
    let mut best = 0.0f64;
    // Column sums c_j = Σ_{i in U} d_ij q_ij; the optimal V keeps either all
    // positive or all negative columns.
    let mut col = vec![0.0f64; n];
    for mask in 0u32..(1u32 << n) {
        col.iter_mut().for_each(|c| *c = 0.0);
        for i in 0..n {
            if mask >> i & 1 == 1 {
                for j in 0..n {
                    col[j] += d[[i, j]] * q[[i, j]];
                }
            }
        }
        let pos: f64 = col.iter().filter(|&&c| c > 0.0).sum();
        let neg: f64 = -col.iter().filter(|&&c| c < 0.0).sum::<f64>();
        best = best.max(pos.max(neg));
    }
    Ok(best / sum_q)
}

/// Dense densifying weight matrix of a graph; oracle and tiny-N paths only.
pub fn dense_weights(graph: &DirectedGraphSignal, w: &DensifyWeights) -> Array2<f64> {
    let n = graph.num_nodes();
    let mut q = Array2::from_elem((n, n), w.e);
    for (i, j) in graph.edges() {
        q[[i as usize, j as usize]] = 1.0;
    }
    q
}

/// Signal cut norm (1/(D N)) Σ_j max(Σ_i y_ij⁺, Σ_i y_ij⁻); exact closed form.
pub fn signal_cut_norm(y: &Array2<f64>) -> f64 {
    let (n, d) = y.dim();
    if n == 0 || d == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for col in y.columns() {
        let pos: f64 = col.iter().filter(|&&v| v > 0.0).sum();
        let neg: f64 = -col.iter().filter(|&&v| v < 0.0).sum::<f64>();
        acc += pos.max(neg);
    }
    acc / (n * d) as f64
}

/// Densifying cut similarity α (1+Γ) ‖A-C‖_{□;Q_A} + β ‖X-P‖_□ with the
/// matrix part evaluated exactly (small N only).
pub fn densifying_cut_similarity(
    graph: &DirectedGraphSignal,
    c: &Array2<f64>,
    p: &Array2<f64>,
    gamma: f64,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    if (alpha + beta - 1.0).abs() > 1e-12 || alpha < 0.0 || beta < 0.0 {
        return Err(IbgError::Validation(format!(
            "need alpha, beta >= 0 with alpha + beta = 1, got {alpha}, {beta}"
        )));
    }
    let w = densify_weights(graph.num_nodes(), graph.num_edges(), gamma)?;
    let graph_part = if alpha > 0.0 {
        let q = dense_weights(graph, &w);
        let diff = graph.dense_adjacency() - c;
        alpha * (1.0 + gamma) * exact_matrix_cut_norm(&diff, &q)?
    } else {
        0.0
    };
    let signal_part = if beta > 0.0 {
        let diff = graph.signal() - p;
        beta * signal_cut_norm(&diff)
    } else {
        0.0
    };
    Ok(graph_part + signal_part)
}
