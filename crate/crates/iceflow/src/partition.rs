//! Physically-weighted spectral partitioning of the mesh into contiguous,
//! size-balanced subdomains.
//!
//! Edge weights combine spatial proximity with similarity of mean features
//! and mean targets (Gaussian factors with negative squared exponents, the
//! normalized-cuts convention); support is restricted to mesh edges so
//! clusters stay spatially coherent. From L = D − W the smallest nontrivial
//! eigenvectors give the spectral embedding, clustered by a size-penalized
//! k-means; a final repair pass reassigns disconnected fragments so every
//! cluster induces a connected subgraph.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::dataprep::{NormStats, Sample};
use crate::eigen::{lanczos_smallest_nonzero, symmetric_eigen};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Bandwidths of the similarity factors; `None` selects the median heuristic
/// (median of the corresponding difference norms over mesh edges).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SimilarityParams {
    pub sigma_x: Option<f64>,
    pub sigma_f: Option<f64>,
    pub sigma_y: Option<f64>,
}

impl SimilarityParams {
    pub fn validate(&self) -> Result<()> {
        for (name, s) in [
            ("sigma_x", self.sigma_x),
            ("sigma_f", self.sigma_f),
            ("sigma_y", self.sigma_y),
        ] {
            if let Some(v) = s {
                if !(v > 0.0) {
                    return Err(Error::Partition(format!("{name} must be > 0, got {v}")));
                }
            }
        }
        Ok(())
    }
}

/// Per-node mean fields over the training realizations, z-scored: the
/// (thickness, friction, bed) triple and the velocity components.
#[derive(Debug, Clone)]
pub struct MeanFields {
    pub features: Array2<f64>,
    pub targets: Array2<f64>,
}

pub fn mean_fields(train: &[&Sample], stats: &NormStats) -> Result<MeanFields> {
    if train.is_empty() {
        return Err(Error::Partition("mean fields need a nonempty training split".into()));
    }
    let v = train[0].node_features.nrows();
    let mut features = Array2::zeros((v, 3));
    let mut targets = Array2::zeros((v, 2));
    let scale = 1.0 / train.len() as f64;
    for s in train {
        for i in 0..v {
            // z-scored (thickness, friction, bed)
            features[[i, 0]] += (s.node_features[[i, 0]] - stats.mu[0]) / stats.sigma[0] * scale;
            features[[i, 1]] += (s.node_features[[i, 2]] - stats.mu[2]) / stats.sigma[2] * scale;
            features[[i, 2]] += (s.node_features[[i, 1]] - stats.mu[1]) / stats.sigma[1] * scale;
            targets[[i, 0]] +=
                (s.targets[[i, 0]] - stats.target_mu[0]) / stats.target_sigma[0] * scale;
            targets[[i, 1]] +=
                (s.targets[[i, 1]] - stats.target_mu[1]) / stats.target_sigma[1] * scale;
        }
    }
    Ok(MeanFields { features, targets })
}

fn sq_norm_diff(a: ArrayView2<f64>, u: usize, v: usize) -> f64 {
    let (ru, rv) = (a.row(u), a.row(v));
    ru.iter().zip(rv.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n == 0 {
        return 1.0;
    }
    let m = if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) };
    if m > 1e-300 {
        m
    } else {
        1.0
    }
}

/// Bandwidths resolved on this graph: (σ_x, σ_f, σ_y).
pub fn resolve_bandwidths(
    graph: &Graph,
    fields: &MeanFields,
    params: &SimilarityParams,
) -> Result<[f64; 3]> {
    params.validate()?;
    let coords = graph.coords();
    let mut dx = Vec::with_capacity(graph.num_edges());
    let mut df = Vec::with_capacity(graph.num_edges());
    let mut dy = Vec::with_capacity(graph.num_edges());
    for &[t, h] in graph.edges() {
        let (t, h) = (t as usize, h as usize);
        let d =
            ((coords[t][0] - coords[h][0]).powi(2) + (coords[t][1] - coords[h][1]).powi(2)).sqrt();
        dx.push(d);
        df.push(sq_norm_diff(fields.features.view(), t, h).sqrt());
        dy.push(sq_norm_diff(fields.targets.view(), t, h).sqrt());
    }
    Ok([
        params.sigma_x.unwrap_or_else(|| median(dx)),
        params.sigma_f.unwrap_or_else(|| median(df)),
        params.sigma_y.unwrap_or_else(|| median(dy)),
    ])
}

/// Similarity of one mesh edge (u, v):
/// exp(−‖Δx‖²/σ_x²)·exp(−‖Δf‖²/σ_f²)·exp(−‖Δy‖²/σ_y²) ∈ (0, 1].
pub fn edge_similarity(
    graph: &Graph,
    fields: &MeanFields,
    sigmas: &[f64; 3],
    u: usize,
    v: usize,
) -> Result<f64> {
    if graph.edge_between(u, v).is_none() {
        return Err(Error::Partition(format!("({u}, {v}) is not a mesh edge")));
    }
    let coords = graph.coords();
    let dx2 = (coords[u][0] - coords[v][0]).powi(2) + (coords[u][1] - coords[v][1]).powi(2);
    let df2 = sq_norm_diff(fields.features.view(), u, v);
    let dy2 = sq_norm_diff(fields.targets.view(), u, v);
    Ok(
        (-dx2 / (sigmas[0] * sigmas[0]) - df2 / (sigmas[1] * sigmas[1])
            - dy2 / (sigmas[2] * sigmas[2]))
            .exp(),
    )
}

/// Similarity weights for every mesh edge, in edge order.
pub fn edge_weights(graph: &Graph, fields: &MeanFields, sigmas: &[f64; 3]) -> Result<Vec<f64>> {
    graph
        .edges()
        .iter()
        .map(|&[t, h]| edge_similarity(graph, fields, sigmas, t as usize, h as usize))
        .collect()
}

/// Weighted graph Laplacian L = D − W with W supported on mesh edges.
#[derive(Debug, Clone)]
pub struct Laplacian {
    edges: Vec<[u32; 2]>,
    weights: Vec<f64>,
    degrees: Vec<f64>,
}

impl Laplacian {
    pub fn from_edge_weights(graph: &Graph, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != graph.num_edges() {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for {} edges",
                weights.len(),
                graph.num_edges()
            )));
        }
        if let Some((alpha, &w)) = weights.iter().enumerate().find(|(_, &w)| !(w >= 0.0)) {
            return Err(Error::Partition(format!("negative or NaN weight {w} on edge {alpha}")));
        }
        let degrees = graph.incident_sum(&weights);
        Ok(Self {
            edges: graph.edges().to_vec(),
            weights,
            degrees,
        })
    }

    /// Validating constructor from a dense symmetric weight matrix with zero
    /// diagonal.
    pub fn from_dense(w: &Array2<f64>) -> Result<Self> {
        let n = w.nrows();
        if n != w.ncols() {
            return Err(Error::ShapeMismatch(format!("W is {}×{}", n, w.ncols())));
        }
        let mut edges = Vec::new();
        let mut weights = Vec::new();
        for i in 0..n {
            if w[[i, i]] != 0.0 {
                return Err(Error::Partition(format!("W has nonzero diagonal at {i}")));
            }
            for j in i + 1..n {
                if w[[i, j]] != w[[j, i]] {
                    return Err(Error::Partition(format!("W is asymmetric at ({i}, {j})")));
                }
                if w[[i, j]] < 0.0 {
                    return Err(Error::Partition(format!("W has a negative entry at ({i}, {j})")));
                }
                if w[[i, j]] != 0.0 {
                    edges.push([i as u32, j as u32]);
                    weights.push(w[[i, j]]);
                }
            }
        }
        let mut degrees = vec![0.0; n];
        for (e, &[a, b]) in edges.iter().enumerate() {
            degrees[a as usize] += weights[e];
            degrees[b as usize] += weights[e];
        }
        Ok(Self { edges, weights, degrees })
    }

    pub fn order(&self) -> usize {
        self.degrees.len()
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.degrees.len() {
            y[i] = self.degrees[i] * x[i];
        }
        for (e, &[a, b]) in self.edges.iter().enumerate() {
            let w = self.weights[e];
            y[a as usize] -= w * x[b as usize];
            y[b as usize] -= w * x[a as usize];
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.order();
        let mut out = Array2::zeros((n, n));
        for i in 0..n {
            out[[i, i]] = self.degrees[i];
        }
        for (e, &[a, b]) in self.edges.iter().enumerate() {
            out[[a as usize, b as usize]] = -self.weights[e];
            out[[b as usize, a as usize]] = -self.weights[e];
        }
        out
    }

    /// vᵀLv = Σ_edges w(v_u − v_v)².
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        self.edges
            .iter()
            .zip(&self.weights)
            .map(|(&[a, b], &w)| {
                let d = v[a as usize] - v[b as usize];
                w * d * d
            })
            .sum()
    }

    pub fn max_eigenvalue_bound(&self) -> f64 {
        2.0 * self.degrees.iter().fold(0.0f64, |m, &d| m.max(d))
    }
}

/// Spectral embedding options.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingOptions {
    /// Above this node count the Lanczos path replaces the dense solver.
    pub dense_cap: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmbeddingOptions {
    fn default() -> Self {
        Self {
            dense_cap: 3000,
            tol: 1e-8,
            max_iter: 400,
        }
    }
}

/// Eigenvectors of the m smallest nonzero eigenvalues of L, unit-normalized,
/// sign-fixed (first significant entry positive), orthogonal to constants.
pub fn spectral_embedding(lap: &Laplacian, m: usize, opts: &EmbeddingOptions) -> Result<Array2<f64>> {
    let n = lap.order();
    if m == 0 || m + 1 >= n {
        return Err(Error::Partition(format!(
            "embedding dimension {m} invalid for {n} nodes"
        )));
    }
    let disconnect_tol = 1e-10 * lap.max_eigenvalue_bound().max(1e-300);
    let mut embedding = Array2::zeros((n, m));

    if n <= opts.dense_cap {
        let (vals, vecs) = symmetric_eigen(&lap.to_dense())?;
        if vals[1] <= disconnect_tol {
            return Err(Error::Partition(
                "similarity graph is disconnected (repeated zero eigenvalue)".into(),
            ));
        }
        for j in 0..m {
            for i in 0..n {
                embedding[[i, j]] = vecs[[i, j + 1]];
            }
        }
    } else {
        let (vals, vecs) = lanczos_smallest_nonzero(
            |x, y| lap.apply(x, y),
            n,
            m,
            lap.max_eigenvalue_bound(),
            opts.tol,
            opts.max_iter,
        )?;
        if vals[0] <= disconnect_tol {
            return Err(Error::Partition(
                "similarity graph is disconnected (repeated zero eigenvalue)".into(),
            ));
        }
        embedding.assign(&vecs);
    }

    // sign convention: first entry with significant magnitude is positive
    for j in 0..m {
        let mut col = embedding.column_mut(j);
        if let Some(lead) = col.iter().find(|v| v.abs() > 1e-12) {
            if *lead < 0.0 {
                for x in col.iter_mut() {
                    *x = -*x;
                }
            }
        }
    }
    Ok(embedding)
}

/// Size-penalized Lloyd iterations with k-means++ seeding. The assignment
/// cost of a point to cluster j is ‖x − c_j‖² + λ·max(0, n_j − N/k), with
/// cluster sizes updated greedily over a randomized point order.
pub fn balanced_kmeans(
    points: ArrayView2<f64>,
    k: usize,
    penalty: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    let n = points.nrows();
    if k < 2 {
        return Err(Error::Partition(format!("balanced_kmeans needs k ≥ 2, got {k}")));
    }
    if penalty < 0.0 {
        return Err(Error::Partition(format!("penalty must be ≥ 0, got {penalty}")));
    }
    if n < k {
        return Err(Error::Partition(format!("{n} points cannot form {k} clusters")));
    }
    let dim = points.ncols();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let dist2 = |p: usize, c: &[f64]| -> f64 {
        points
            .row(p)
            .iter()
            .zip(c)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };

    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points.row(rng.gen_range(0..n)).to_vec());
    let mut best_d2: Vec<f64> = (0..n).map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = best_d2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut draw = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (p, &d) in best_d2.iter().enumerate() {
                draw -= d;
                if draw <= 0.0 {
                    chosen = p;
                    break;
                }
            }
            chosen
        };
        centroids.push(points.row(next).to_vec());
        for p in 0..n {
            best_d2[p] = best_d2[p].min(dist2(p, centroids.last().unwrap()));
        }
    }

    let target = n as f64 / k as f64;
    let mut labels: Vec<usize> = vec![usize::MAX; n];
    let mut sizes = vec![0usize; k];
    let mut order: Vec<usize> = (0..n).collect();

    for _iter in 0..100 {
        order.shuffle(&mut rng);
        let mut changed = false;
        for &p in &order {
            if labels[p] != usize::MAX {
                sizes[labels[p]] -= 1;
            }
            let mut best = 0usize;
            let mut best_cost = f64::INFINITY;
            for (j, c) in centroids.iter().enumerate() {
                let bias = penalty * (sizes[j] as f64 - target).max(0.0);
                let cost = dist2(p, c) + bias;
                if cost < best_cost {
                    best_cost = cost;
                    best = j;
                }
            }
            if labels[p] != best {
                changed = true;
            }
            labels[p] = best;
            sizes[best] += 1;
        }

        // re-seed empty clusters at the farthest point
        for j in 0..k {
            if sizes[j] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist2(a, &centroids[labels[a]])
                            .partial_cmp(&dist2(b, &centroids[labels[b]]))
                            .unwrap()
                    })
                    .unwrap();
                sizes[labels[far]] -= 1;
                labels[far] = j;
                sizes[j] = 1;
                centroids[j] = points.row(far).to_vec();
                changed = true;
            }
        }

        // centroid update
        let mut sums = vec![vec![0.0; dim]; k];
        for p in 0..n {
            for c in 0..dim {
                sums[labels[p]][c] += points[[p, c]];
            }
        }
        for j in 0..k {
            if sizes[j] > 0 {
                for c in 0..dim {
                    centroids[j][c] = sums[j][c] / sizes[j] as f64;
                }
            }
        }

        if !changed {
            break;
        }
    }
    Ok(labels)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceReport {
    pub sizes: Vec<usize>,
    /// N/k.
    pub target_size: f64,
    /// max_j |n_j − N/k| / (N/k).
    pub max_imbalance: f64,
    pub cluster_connected: Vec<bool>,
    /// Nodes moved by the contiguity repair pass.
    pub repaired_nodes: usize,
    pub resolved_penalty: f64,
    pub resolved_sigmas: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub k: usize,
    pub labels: Vec<usize>,
    pub overlap_hops: usize,
    pub balance_report: BalanceReport,
    /// SHA-256 of the graph file this partition refers to (empty when built
    /// in memory).
    pub graph_hash: String,
}

impl Partition {
    pub fn validate(&self, graph: &Graph) -> Result<()> {
        if self.labels.len() != graph.num_nodes() {
            return Err(Error::ShapeMismatch(format!(
                "partition has {} labels, graph has {} nodes",
                self.labels.len(),
                graph.num_nodes()
            )));
        }
        if self.labels.iter().any(|&l| l >= self.k) {
            return Err(Error::Partition("label out of range".into()));
        }
        Ok(())
    }

    /// Node subsets per subdomain: the cluster plus `overlap_hops` rings of
    /// neighbors.
    pub fn subdomain_subsets(&self, graph: &Graph) -> Vec<Vec<usize>> {
        (0..self.k)
            .map(|c| {
                let mut in_set: Vec<bool> = self.labels.iter().map(|&l| l == c).collect();
                let mut frontier: Vec<usize> =
                    (0..graph.num_nodes()).filter(|&i| in_set[i]).collect();
                for _ in 0..self.overlap_hops {
                    let mut next = Vec::new();
                    for &i in &frontier {
                        for &j in graph.adjacent_nodes(i) {
                            if !in_set[j as usize] {
                                in_set[j as usize] = true;
                                next.push(j as usize);
                            }
                        }
                    }
                    frontier = next;
                }
                (0..graph.num_nodes()).filter(|&i| in_set[i]).collect()
            })
            .collect()
    }
}

fn cluster_components(graph: &Graph, labels: &[usize], cluster: usize) -> Vec<Vec<usize>> {
    let nodes: Vec<usize> = (0..graph.num_nodes()).filter(|&i| labels[i] == cluster).collect();
    let mut visited = vec![false; graph.num_nodes()];
    let mut components = Vec::new();
    for &start in &nodes {
        if visited[start] {
            continue;
        }
        let mut comp = vec![start];
        visited[start] = true;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for &j in graph.adjacent_nodes(i) {
                let j = j as usize;
                if labels[j] == cluster && !visited[j] {
                    visited[j] = true;
                    comp.push(j);
                    stack.push(j);
                }
            }
        }
        components.push(comp);
    }
    components
}

/// Reassigns disconnected fragments of each cluster to the neighboring
/// cluster with the largest boundary weight, iterated to a fixpoint.
fn repair_contiguity(
    graph: &Graph,
    labels: &mut [usize],
    weights: &[f64],
    k: usize,
) -> Result<usize> {
    let mut moved_total = 0usize;
    for _round in 0..graph.num_nodes() {
        let mut moved_this_round = 0usize;
        for cluster in 0..k {
            let mut components = cluster_components(graph, labels, cluster);
            if components.len() <= 1 {
                continue;
            }
            components.sort_by_key(|c| std::cmp::Reverse(c.len()));
            for fragment in &components[1..] {
                let mut boundary = vec![0.0f64; k];
                for &i in fragment {
                    for (j, alpha) in graph.incident(i) {
                        let lj = labels[j as usize];
                        if lj != cluster {
                            boundary[lj] += weights[alpha as usize];
                        }
                    }
                }
                let (dest, _) = boundary
                    .iter()
                    .enumerate()
                    .filter(|&(c, _)| c != cluster)
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .ok_or_else(|| Error::Partition("fragment with no neighbors".into()))?;
                for &i in fragment {
                    labels[i] = dest;
                }
                moved_this_round += fragment.len();
            }
        }
        moved_total += moved_this_round;
        if moved_this_round == 0 {
            return Ok(moved_total);
        }
    }
    Err(Error::Partition("contiguity repair did not reach a fixpoint".into()))
}

/// End-to-end pipeline: similarity weights → Laplacian → spectral embedding →
/// size-penalized k-means → contiguity repair.
#[allow(clippy::too_many_arguments)]
pub fn partition_mesh(
    graph: &Graph,
    train: &[&Sample],
    stats: &NormStats,
    k: usize,
    params: &SimilarityParams,
    penalty: Option<f64>,
    embedding_dim: Option<usize>,
    seed: u64,
) -> Result<Partition> {
    if k == 0 {
        return Err(Error::Partition("k must be ≥ 1".into()));
    }
    let n = graph.num_nodes();
    if k == 1 {
        return Ok(Partition {
            k: 1,
            labels: vec![0; n],
            overlap_hops: 0,
            balance_report: BalanceReport {
                sizes: vec![n],
                target_size: n as f64,
                max_imbalance: 0.0,
                cluster_connected: vec![graph.is_connected()],
                repaired_nodes: 0,
                resolved_penalty: 0.0,
                resolved_sigmas: [0.0; 3],
            },
            graph_hash: String::new(),
        });
    }

    let fields = mean_fields(train, stats)?;
    let sigmas = resolve_bandwidths(graph, &fields, params)?;
    let weights = edge_weights(graph, &fields, &sigmas)?;
    let lap = Laplacian::from_edge_weights(graph, weights.clone())?;
    let m = embedding_dim.unwrap_or(k).max(1);
    let embedding = spectral_embedding(&lap, m, &EmbeddingOptions::default())?;

    let resolved_penalty = match penalty {
        Some(p) => p,
        None => {
            // a ~25% size excess should cost about one typical squared distance
            let mut centroid = vec![0.0; m];
            for i in 0..n {
                for c in 0..m {
                    centroid[c] += embedding[[i, c]] / n as f64;
                }
            }
            let mean_sq: f64 = (0..n)
                .map(|i| {
                    embedding
                        .row(i)
                        .iter()
                        .zip(&centroid)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / n as f64;
            4.0 * mean_sq * k as f64 / n as f64
        }
    };

    let mut labels = balanced_kmeans(embedding.view(), k, resolved_penalty, seed)?;
    let repaired_nodes = repair_contiguity(graph, &mut labels, &weights, k)?;

    let mut sizes = vec![0usize; k];
    for &l in &labels {
        sizes[l] += 1;
    }
    let target = n as f64 / k as f64;
    let max_imbalance = sizes
        .iter()
        .map(|&s| (s as f64 - target).abs() / target)
        .fold(0.0f64, f64::max);
    let cluster_connected: Vec<bool> = (0..k)
        .map(|c| cluster_components(graph, &labels, c).len() == 1)
        .collect();

    Ok(Partition {
        k,
        labels,
        overlap_hops: 0,
        balance_report: BalanceReport {
            sizes,
            target_size: target,
            max_imbalance,
            cluster_connected,
            repaired_nodes,
            resolved_penalty,
            resolved_sigmas: sigmas,
        },
        graph_hash: String::new(),
    })
}

pub fn save_partition(partition: &Partition, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(partition)?)?;
    Ok(())
}

pub fn load_partition(path: &Path) -> Result<Partition> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

/// Adjusted Rand index between two labelings; 1 is perfect agreement, 0 is
/// chance level.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ka = a.iter().max().map(|&m| m + 1).unwrap_or(0);
    let kb = b.iter().max().map(|&m| m + 1).unwrap_or(0);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let choose2 = |x: u64| -> f64 { (x * x.saturating_sub(1)) as f64 / 2.0 };
    let mut sum_ij = 0.0;
    let mut row_sums = vec![0u64; ka];
    let mut col_sums = vec![0u64; kb];
    for i in 0..ka {
        for j in 0..kb {
            sum_ij += choose2(table[i][j]);
            row_sums[i] += table[i][j];
            col_sums[j] += table[i][j];
        }
    }
    let sum_a: f64 = row_sums.iter().map(|&x| choose2(x)).sum();
    let sum_b: f64 = col_sums.iter().map(|&x| choose2(x)).sum();
    let total = choose2(a.len() as u64);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-300 {
        return 1.0;
    }
    (sum_ij - expected) / (max_index - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::FEATURE_COUNT;

    fn triangle() -> Graph {
        Graph::new(
            3,
            vec![[0, 1], [1, 2], [0, 2]],
            vec![[0.0, 0.0], [1.0, 0.0], [0.5, 1.0]],
        )
        .unwrap()
    }

    fn uniform_stats() -> NormStats {
        NormStats {
            mu: vec![0.0; FEATURE_COUNT],
            sigma: vec![1.0; FEATURE_COUNT],
            dist_min: 0.0,
            dist_max: 1.0,
            target_mu: vec![0.0, 0.0],
            target_sigma: vec![1.0, 1.0],
        }
    }

    fn flat_sample(graph: &Graph) -> Sample {
        Sample {
            realization: 0,
            snapshot: 0,
            node_features: Array2::zeros((graph.num_nodes(), FEATURE_COUNT)),
            edge_features: Array2::ones((graph.num_edges(), 1)),
            targets: Array2::zeros((graph.num_nodes(), 2)),
        }
    }

    #[test]
    fn similarity_is_one_for_identical_nodes_and_symmetric() {
        let g = triangle();
        let mut fields = MeanFields {
            features: Array2::zeros((3, 3)),
            targets: Array2::zeros((3, 2)),
        };
        // nodes identical except coordinates; with huge sigma_x the spatial
        // factor is ~1
        let sigmas = [1e9, 1.0, 1.0];
        let w01 = edge_similarity(&g, &fields, &sigmas, 0, 1).unwrap();
        assert!((w01 - 1.0).abs() < 1e-12);
        fields.features[[0, 0]] = 0.7;
        let a = edge_similarity(&g, &fields, &sigmas, 0, 1).unwrap();
        let b = edge_similarity(&g, &fields, &sigmas, 1, 0).unwrap();
        assert_eq!(a, b);
        assert!(a > 0.0 && a <= 1.0);
    }

    #[test]
    fn similarity_unit_bandwidth_gives_inverse_e() {
        let g = triangle();
        let mut fields = MeanFields {
            features: Array2::zeros((3, 3)),
            targets: Array2::zeros((3, 2)),
        };
        // ‖Δf‖² = σ_f², zero spatial/target contributions
        fields.features[[0, 0]] = 2.0;
        let sigmas = [1e12, 2.0, 1.0];
        let w = edge_similarity(&g, &fields, &sigmas, 0, 1).unwrap();
        assert!((w - (-1.0f64).exp()).abs() < 1e-9, "{w}");
        assert!((w - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn non_edge_pair_is_an_error() {
        let g =
            Graph::new(3, vec![[0, 1], [1, 2]], vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).unwrap();
        let fields = MeanFields {
            features: Array2::zeros((3, 3)),
            targets: Array2::zeros((3, 2)),
        };
        assert!(edge_similarity(&g, &fields, &[1.0; 3], 0, 2).is_err());
    }

    #[test]
    fn laplacian_of_unweighted_triangle() {
        let g = triangle();
        let lap = Laplacian::from_edge_weights(&g, vec![1.0; 3]).unwrap();
        let dense = lap.to_dense();
        let (vals, _) = symmetric_eigen(&dense).unwrap();
        assert!(vals[0].abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        assert!((vals[2] - 3.0).abs() < 1e-12);
        // L·1 = 0
        let mut y = vec![0.0; 3];
        lap.apply(&[1.0, 1.0, 1.0], &mut y);
        assert!(y.iter().all(|&v| v.abs() < 1e-15));
        // quadratic form identity and positivity
        let v = [0.3, -0.9, 2.0];
        let mut lv = vec![0.0; 3];
        lap.apply(&v, &mut lv);
        let vlv: f64 = v.iter().zip(&lv).map(|(a, b)| a * b).sum();
        assert!((vlv - lap.quadratic_form(&v)).abs() < 1e-12);
        assert!(vlv >= 0.0);
    }

    #[test]
    fn dense_laplacian_rejects_asymmetry() {
        let mut w = Array2::zeros((3, 3));
        w[[0, 1]] = 1.0;
        assert!(Laplacian::from_dense(&w).is_err());
        w[[1, 0]] = 1.0;
        assert!(Laplacian::from_dense(&w).is_ok());
    }

    #[test]
    fn fiedler_vector_of_path3() {
        let g =
            Graph::new(3, vec![[0, 1], [1, 2]], vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).unwrap();
        let lap = Laplacian::from_edge_weights(&g, vec![1.0, 1.0]).unwrap();
        let emb = spectral_embedding(&lap, 1, &EmbeddingOptions::default()).unwrap();
        // Fiedler vector ∝ [−1, 0, 1]/√2, sign-fixed to start positive
        let expect = [1.0 / 2.0f64.sqrt(), 0.0, -1.0 / 2.0f64.sqrt()];
        for i in 0..3 {
            assert!((emb[[i, 0]] - expect[i]).abs() < 1e-10, "{:?}", emb.column(0));
        }
    }

    #[test]
    fn embedding_detects_disconnected_support() {
        let g = Graph::new_subgraph(
            4,
            vec![[0, 1], [2, 3]],
            vec![[0.0, 0.0], [1.0, 0.0], [5.0, 0.0], [6.0, 0.0]],
        )
        .unwrap();
        let lap = Laplacian::from_edge_weights(&g, vec![1.0, 1.0]).unwrap();
        assert!(spectral_embedding(&lap, 1, &EmbeddingOptions::default()).is_err());
    }

    #[test]
    fn embedding_lanczos_path_agrees_with_dense() {
        // ring with a chord; force the Lanczos path with a tiny dense_cap
        let n = 30;
        let mut edges: Vec<[u32; 2]> = (0..n).map(|i| [i as u32, ((i + 1) % n) as u32]).collect();
        edges.push([0, 15]);
        let coords = (0..n)
            .map(|i| {
                let a = i as f64 / n as f64 * std::f64::consts::TAU;
                [a.cos(), a.sin()]
            })
            .collect();
        let g = Graph::new(n, edges, coords).unwrap();
        let w: Vec<f64> = (0..g.num_edges()).map(|e| 0.5 + 0.1 * (e % 3) as f64).collect();
        let lap = Laplacian::from_edge_weights(&g, w).unwrap();
        let dense = spectral_embedding(&lap, 2, &EmbeddingOptions::default()).unwrap();
        let lanczos = spectral_embedding(
            &lap,
            2,
            &EmbeddingOptions {
                dense_cap: 4,
                ..EmbeddingOptions::default()
            },
        )
        .unwrap();
        for j in 0..2 {
            for i in 0..n {
                assert!(
                    (dense[[i, j]] - lanczos[[i, j]]).abs() < 1e-6,
                    "col {j} row {i}: {} vs {}",
                    dense[[i, j]],
                    lanczos[[i, j]]
                );
            }
        }
    }

    fn two_blobs(n_each: usize, separation: f64, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut pts = Array2::zeros((2 * n_each, 2));
        for i in 0..2 * n_each {
            let offset = if i < n_each { 0.0 } else { separation };
            pts[[i, 0]] = offset + rng.gen_range(-0.5..0.5);
            pts[[i, 1]] = rng.gen_range(-0.5..0.5);
        }
        pts
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        let pts = two_blobs(40, 10.0, 3);
        for penalty in [0.0, 0.5, 10.0] {
            let labels = balanced_kmeans(pts.view(), 2, penalty, 11).unwrap();
            let first = labels[0];
            assert!(labels[..40].iter().all(|&l| l == first));
            assert!(labels[40..].iter().all(|&l| l != first));
        }
    }

    #[test]
    fn kmeans_deterministic_given_seed() {
        let pts = two_blobs(30, 6.0, 5);
        let a = balanced_kmeans(pts.view(), 2, 0.0, 7).unwrap();
        let b = balanced_kmeans(pts.view(), 2, 0.0, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kmeans_penalty_balances_lopsided_blobs() {
        // 90 points in one blob, 10 in another; a strong penalty caps the
        // excess so both sizes land within 20% of N/k.
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mut pts = Array2::zeros((100, 2));
        for i in 0..100 {
            let offset = if i < 90 { 0.0 } else { 30.0 };
            pts[[i, 0]] = offset + rng.gen_range(-1.0..1.0);
            pts[[i, 1]] = rng.gen_range(-1.0..1.0);
        }
        let labels = balanced_kmeans(pts.view(), 2, 50.0, 13).unwrap();
        let mut sizes = [0usize; 2];
        for &l in &labels {
            sizes[l] += 1;
        }
        for &s in &sizes {
            assert!(
                (s as f64 - 50.0).abs() <= 10.0,
                "sizes {sizes:?} not within 20% of N/k"
            );
        }
    }

    #[test]
    fn partition_k1_is_trivial() {
        let g = triangle();
        let s = flat_sample(&g);
        let p = partition_mesh(
            &g,
            &[&s],
            &uniform_stats(),
            1,
            &SimilarityParams::default(),
            None,
            None,
            0,
        )
        .unwrap();
        assert_eq!(p.labels, vec![0, 0, 0]);
        assert_eq!(p.balance_report.sizes, vec![3]);
    }

    #[test]
    fn ari_basics() {
        let a = [0, 0, 1, 1, 2, 2];
        assert!((adjusted_rand_index(&a, &a) - 1.0).abs() < 1e-12);
        let b = [2, 2, 0, 0, 1, 1]; // same clustering, relabeled
        assert!((adjusted_rand_index(&a, &b) - 1.0).abs() < 1e-12);
        let c = [0, 1, 0, 1, 0, 1];
        assert!(adjusted_rand_index(&a, &c) < 0.3);
    }

    #[test]
    fn partition_file_round_trip() {
        let p = Partition {
            k: 2,
            labels: vec![0, 0, 1],
            overlap_hops: 0,
            balance_report: BalanceReport {
                sizes: vec![2, 1],
                target_size: 1.5,
                max_imbalance: 1.0 / 3.0,
                cluster_connected: vec![true, true],
                repaired_nodes: 0,
                resolved_penalty: 0.1,
                resolved_sigmas: [1.0, 2.0, 3.0],
            },
            graph_hash: "abc".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("partition.json");
        save_partition(&p, &path).unwrap();
        let q = load_partition(&path).unwrap();
        assert_eq!(q.labels, p.labels);
        assert_eq!(q.balance_report.sizes, p.balance_report.sizes);
    }

    #[test]
    fn overlap_subsets_grow_by_hops() {
        let g = Graph::new(
            4,
            vec![[0, 1], [1, 2], [2, 3]],
            vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]],
        )
        .unwrap();
        let mut p = Partition {
            k: 2,
            labels: vec![0, 0, 1, 1],
            overlap_hops: 0,
            balance_report: BalanceReport {
                sizes: vec![2, 2],
                target_size: 2.0,
                max_imbalance: 0.0,
                cluster_connected: vec![true, true],
                repaired_nodes: 0,
                resolved_penalty: 0.0,
                resolved_sigmas: [1.0; 3],
            },
            graph_hash: String::new(),
        };
        let subsets = p.subdomain_subsets(&g);
        assert_eq!(subsets[0], vec![0, 1]);
        assert_eq!(subsets[1], vec![2, 3]);
        p.overlap_hops = 1;
        let subsets = p.subdomain_subsets(&g);
        assert_eq!(subsets[0], vec![0, 1, 2]);
        assert_eq!(subsets[1], vec![1, 2, 3]);
    }

    #[test]
    fn repair_reattaches_fragments() {
        // path of 6; plant labels with a disconnected cluster 0: {0, 1, 4}
        let g = Graph::new(
            6,
            vec![[0, 1], [1, 2], [2, 3], [3, 4], [4, 5]],
            (0..6).map(|i| [i as f64, 0.0]).collect(),
        )
        .unwrap();
        let mut labels = vec![0, 0, 1, 1, 0, 1];
        let weights = vec![1.0; 5];
        let moved = repair_contiguity(&g, &mut labels, &weights, 2).unwrap();
        assert!(moved >= 1);
        for c in 0..2 {
            assert!(cluster_components(&g, &labels, c).len() <= 1);
        }
    }
}
