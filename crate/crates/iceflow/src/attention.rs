//! Attention-derived inner products on node and edge feature spaces.
//!
//! Each head carries query/key embeddings W, K. For an edge (i, j) the edge
//! weight is exp(Wqᵢ·Kqⱼ + Wqⱼ·Kqᵢ) — symmetric in i↔j and strictly positive —
//! and the node weight is the sum over incident edges. Heads are combined by
//! arithmetic mean, which preserves both properties and reduces to the
//! single-head formula when heads agree. The ratio a₁/a₀ recovers row-stochastic
//! node-level attention, and A₀⁻¹d₀ᵀA₁d₀ is the attention Laplacian.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::graph::{build_incidence, Graph};

/// Exponents are clamped to this value before exponentiation; unbounded exp is
/// a real risk early in training. Clamp events are counted for diagnostics.
pub const EXP_CLAMP: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    /// Query embedding, N_h×N_f.
    pub w: Array2<f64>,
    /// Key embedding, N_h×N_f.
    pub k: Array2<f64>,
}

/// Per-head query/key embeddings; all heads share (N_h, N_f).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub heads: Vec<AttentionHead>,
}

impl AttentionParams {
    pub fn zeros(num_heads: usize, hidden_dim: usize, latent_dim: usize) -> Self {
        let heads = (0..num_heads)
            .map(|_| AttentionHead {
                w: Array2::zeros((hidden_dim, latent_dim)),
                k: Array2::zeros((hidden_dim, latent_dim)),
            })
            .collect();
        Self { heads }
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.heads[0].w.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.heads[0].w.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads.is_empty() {
            return Err(Error::Metric("attention needs at least one head".into()));
        }
        let shape = self.heads[0].w.dim();
        for (h, head) in self.heads.iter().enumerate() {
            if head.w.dim() != shape || head.k.dim() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "attention head {h} has shape {:?}/{:?}, expected {shape:?}",
                    head.w.dim(),
                    head.k.dim()
                )));
            }
            if head.w.iter().chain(head.k.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("attention head {h}")));
            }
        }
        Ok(())
    }
}

/// Diagonals of the edge metric A₁ and node metric A₀, plus the number of
/// clamped exponents encountered while building them.
#[derive(Debug, Clone)]
pub struct MetricPair {
    pub a1_diag: Vec<f64>,
    pub a0_diag: Vec<f64>,
    pub clamped: usize,
}

fn check_latents(q: ArrayView2<f64>, params: &AttentionParams, graph: &Graph) -> Result<()> {
    if q.nrows() != graph.num_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "q has {} rows, graph has {} nodes",
            q.nrows(),
            graph.num_nodes()
        )));
    }
    if q.ncols() != params.latent_dim() {
        return Err(Error::ShapeMismatch(format!(
            "q has {} columns, attention expects latent dim {}",
            q.ncols(),
            params.latent_dim()
        )));
    }
    Ok(())
}

/// Symmetrized pre-exponential score of one head for latent rows qi, qj.
fn head_score(head: &AttentionHead, qi: &[f64], qj: &[f64]) -> f64 {
    let nh = head.w.nrows();
    let nf = head.w.ncols();
    let mut score = 0.0;
    for r in 0..nh {
        let wr = head.w.row(r);
        let kr = head.k.row(r);
        let mut wqi = 0.0;
        let mut wqj = 0.0;
        let mut kqi = 0.0;
        let mut kqj = 0.0;
        for c in 0..nf {
            wqi += wr[c] * qi[c];
            wqj += wr[c] * qj[c];
            kqi += kr[c] * qi[c];
            kqj += kr[c] * qj[c];
        }
        score += wqi * kqj + wqj * kqi;
    }
    score
}

/// Edge metric for a single edge (i, j): per head exp of the symmetrized
/// query/key score, averaged over heads. Strictly positive, symmetric in i↔j.
pub fn edge_metric(
    q: ArrayView2<f64>,
    params: &AttentionParams,
    i: usize,
    j: usize,
) -> Result<f64> {
    if i >= q.nrows() || j >= q.nrows() {
        return Err(Error::IndexOutOfRange(format!("edge endpoint ({i}, {j})")));
    }
    if q.ncols() != params.latent_dim() {
        return Err(Error::ShapeMismatch(format!(
            "q has {} columns, attention expects {}",
            q.ncols(),
            params.latent_dim()
        )));
    }
    let qi: Vec<f64> = q.row(i).to_vec();
    let qj: Vec<f64> = q.row(j).to_vec();
    let mut acc = 0.0;
    for head in &params.heads {
        let s = head_score(head, &qi, &qj);
        if !s.is_finite() {
            return Err(Error::NonFinite(format!("attention exponent on edge ({i}, {j})")));
        }
        acc += s.min(EXP_CLAMP).exp();
    }
    Ok(acc / params.num_heads() as f64)
}

/// Per-head embedded latents Wq, Kq (each V×N_h), the shared precomputation
/// behind every metric evaluation.
pub fn embed_latents(q: ArrayView2<f64>, params: &AttentionParams) -> Vec<(Array2<f64>, Array2<f64>)> {
    params
        .heads
        .iter()
        .map(|h| (q.dot(&h.w.t()), q.dot(&h.k.t())))
        .collect()
}

/// Edge scores of one head from embedded latents: s_α = Wqᵢ·Kqⱼ + Wqⱼ·Kqᵢ.
pub fn edge_scores(wq: &Array2<f64>, kq: &Array2<f64>, graph: &Graph) -> Array1<f64> {
    let nh = wq.ncols();
    let mut out = Array1::zeros(graph.num_edges());
    for (alpha, &[t, h]) in graph.edges().iter().enumerate() {
        let (wi, wj) = (wq.row(t as usize), wq.row(h as usize));
        let (ki, kj) = (kq.row(t as usize), kq.row(h as usize));
        let mut s = 0.0;
        for c in 0..nh {
            s += wi[c] * kj[c] + wj[c] * ki[c];
        }
        out[alpha] = s;
    }
    out
}

/// Full metric pair over a graph: a₁ per edge, a₀ per node as the sum of
/// incident edge weights.
pub fn node_metric(q: ArrayView2<f64>, params: &AttentionParams, graph: &Graph) -> Result<MetricPair> {
    check_latents(q, params, graph)?;
    let ne = graph.num_edges();
    let mut a1 = vec![0.0; ne];
    let mut clamped = 0usize;
    for (wq, kq) in embed_latents(q, params) {
        let scores = edge_scores(&wq, &kq, graph);
        for (alpha, &s) in scores.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::NonFinite(format!("attention exponent on edge {alpha}")));
            }
            if s > EXP_CLAMP {
                clamped += 1;
            }
            a1[alpha] += s.min(EXP_CLAMP).exp();
        }
    }
    let inv_heads = 1.0 / params.num_heads() as f64;
    for v in &mut a1 {
        *v *= inv_heads;
    }
    let a0 = graph.incident_sum(&a1);
    for (alpha, &v) in a1.iter().enumerate() {
        if !(v > 0.0) {
            return Err(Error::Metric(format!("edge metric underflowed to {v} on edge {alpha}")));
        }
    }
    for (i, &v) in a0.iter().enumerate() {
        if !(v > 0.0) {
            return Err(Error::Metric(format!("node metric non-positive ({v}) at node {i}")));
        }
    }
    Ok(MetricPair { a1_diag: a1, a0_diag: a0, clamped })
}

/// Node-level attention att(i, j) = a₁(i,j)/a₀(i); rows sum to 1 over 𝒩(i).
pub fn attention(
    q: ArrayView2<f64>,
    params: &AttentionParams,
    graph: &Graph,
    i: usize,
    j: usize,
) -> Result<f64> {
    let alpha = graph
        .edge_between(i, j)
        .ok_or_else(|| Error::IndexOutOfRange(format!("({i}, {j}) is not an edge")))?;
    let metric = node_metric(q, params, graph)?;
    Ok(metric.a1_diag[alpha] / metric.a0_diag[i])
}

/// Attention Laplacian via the neighbor sum:
/// [Δv]ᵢ = Σ_{j∈𝒩(i)} att(i,j)(vᵢ − vⱼ).
pub fn attention_laplacian_apply(
    q_metric: ArrayView2<f64>,
    v: ArrayView2<f64>,
    params: &AttentionParams,
    graph: &Graph,
) -> Result<Array2<f64>> {
    if v.nrows() != graph.num_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "v has {} rows, graph has {} nodes",
            v.nrows(),
            graph.num_nodes()
        )));
    }
    let metric = node_metric(q_metric, params, graph)?;
    let mut out = Array2::zeros(v.raw_dim());
    for i in 0..graph.num_nodes() {
        let inv_a0 = 1.0 / metric.a0_diag[i];
        let vi = v.row(i);
        let mut acc = vec![0.0; v.ncols()];
        for (j, alpha) in graph.incident(i) {
            let att = metric.a1_diag[alpha as usize] * inv_a0;
            let vj = v.row(j as usize);
            for c in 0..v.ncols() {
                acc[c] += att * (vi[c] - vj[c]);
            }
        }
        out.row_mut(i).assign(&Array1::from(acc));
    }
    Ok(out)
}

/// Attention Laplacian via the operator composition A₀⁻¹ d₀ᵀ A₁ d₀ v; must
/// agree with the neighbor-sum form within 1e−10.
pub fn attention_laplacian_apply_operator(
    q_metric: ArrayView2<f64>,
    v: ArrayView2<f64>,
    params: &AttentionParams,
    graph: &Graph,
) -> Result<Array2<f64>> {
    if v.nrows() != graph.num_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "v has {} rows, graph has {} nodes",
            v.nrows(),
            graph.num_nodes()
        )));
    }
    let metric = node_metric(q_metric, params, graph)?;
    let d0 = build_incidence(graph);
    let mut edge_vals = d0.apply(v);
    for (alpha, mut row) in edge_vals.rows_mut().into_iter().enumerate() {
        let w = metric.a1_diag[alpha];
        for c in 0..row.len() {
            row[c] *= w;
        }
    }
    let mut out = d0.apply_t(edge_vals.view());
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let inv = 1.0 / metric.a0_diag[i];
        for c in 0..row.len() {
            row[c] *= inv;
        }
    }
    Ok(out)
}
