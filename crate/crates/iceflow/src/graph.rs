//! Graph topology, the signed incidence operator, and subgraph extraction.
//!
//! All structural invariants (no self-loops, no duplicate undirected edges,
//! endpoint validity, connectivity) are enforced at construction, so every
//! `Graph` handed to the numeric layers is already well-formed. Edges keep the
//! orientation of the input order; metric quantities built on top are
//! orientation-symmetric, so the orientation only fixes signs in the
//! incidence operator.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Immutable node/edge topology with planar coordinates.
#[derive(Debug, Clone)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<[u32; 2]>,
    coords: Vec<[f64; 2]>,
    // CSR adjacency; per node, incident (neighbor, edge id) pairs in edge order.
    adj_offsets: Vec<u32>,
    adj_nodes: Vec<u32>,
    adj_edges: Vec<u32>,
    is_subgraph: bool,
    connected: bool,
}

impl Graph {
    /// Builds a graph and checks every structural invariant, including
    /// connectivity. Use [`Graph::new_subgraph`] for slices that are allowed
    /// to be disconnected.
    pub fn new(num_nodes: usize, edges: Vec<[u32; 2]>, coords: Vec<[f64; 2]>) -> Result<Self> {
        let g = Self::build(num_nodes, edges, coords, false)?;
        if !g.connected {
            return Err(Error::InvalidGraph(
                "graph is disconnected; only subgraph slices may be".into(),
            ));
        }
        Ok(g)
    }

    /// Builds a subgraph slice; disconnected slices are allowed and flagged.
    pub fn new_subgraph(num_nodes: usize, edges: Vec<[u32; 2]>, coords: Vec<[f64; 2]>) -> Result<Self> {
        Self::build(num_nodes, edges, coords, true)
    }

    fn build(
        num_nodes: usize,
        edges: Vec<[u32; 2]>,
        coords: Vec<[f64; 2]>,
        is_subgraph: bool,
    ) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        if coords.len() != num_nodes {
            return Err(Error::InvalidGraph(format!(
                "coords length {} does not match num_nodes {}",
                coords.len(),
                num_nodes
            )));
        }
        let mut seen = HashMap::with_capacity(edges.len());
        for (alpha, &[t, h]) in edges.iter().enumerate() {
            if t as usize >= num_nodes || h as usize >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge {alpha} = ({t}, {h}) references a node outside 0..{num_nodes}"
                )));
            }
            if t == h {
                return Err(Error::InvalidGraph(format!("edge {alpha} = ({t}, {h}) is a self-loop")));
            }
            let key = (t.min(h), t.max(h));
            if let Some(prev) = seen.insert(key, alpha) {
                return Err(Error::InvalidGraph(format!(
                    "edges {prev} and {alpha} duplicate the undirected pair {key:?}"
                )));
            }
        }

        // CSR adjacency, incident entries in edge order per node.
        let mut degree = vec![0u32; num_nodes];
        for &[t, h] in &edges {
            degree[t as usize] += 1;
            degree[h as usize] += 1;
        }
        let mut adj_offsets = vec![0u32; num_nodes + 1];
        for i in 0..num_nodes {
            adj_offsets[i + 1] = adj_offsets[i] + degree[i];
        }
        let mut cursor: Vec<u32> = adj_offsets[..num_nodes].to_vec();
        let mut adj_nodes = vec![0u32; 2 * edges.len()];
        let mut adj_edges = vec![0u32; 2 * edges.len()];
        for (alpha, &[t, h]) in edges.iter().enumerate() {
            for (a, b) in [(t, h), (h, t)] {
                let slot = cursor[a as usize] as usize;
                adj_nodes[slot] = b;
                adj_edges[slot] = alpha as u32;
                cursor[a as usize] += 1;
            }
        }

        let mut g = Graph {
            num_nodes,
            edges,
            coords,
            adj_offsets,
            adj_nodes,
            adj_edges,
            is_subgraph,
            connected: true,
        };
        g.connected = g.compute_connected();
        Ok(g)
    }

    fn compute_connected(&self) -> bool {
        let mut visited = vec![false; self.num_nodes];
        let mut stack = vec![0u32];
        visited[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &j in self.adjacent_nodes(i as usize) {
                if !visited[j as usize] {
                    visited[j as usize] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == self.num_nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[[u32; 2]] {
        &self.edges
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn is_subgraph(&self) -> bool {
        self.is_subgraph
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    pub fn degree(&self, i: usize) -> usize {
        (self.adj_offsets[i + 1] - self.adj_offsets[i]) as usize
    }

    fn adjacency_range(&self, i: usize) -> std::ops::Range<usize> {
        self.adj_offsets[i] as usize..self.adj_offsets[i + 1] as usize
    }

    /// Neighbor node ids of `i` in incident-edge order (may repeat never).
    pub fn adjacent_nodes(&self, i: usize) -> &[u32] {
        &self.adj_nodes[self.adjacency_range(i)]
    }

    /// Set of nodes sharing an edge with `i`, sorted ascending.
    pub fn neighbors(&self, i: usize) -> Result<Vec<u32>> {
        self.check_node(i)?;
        let mut out = self.adjacent_nodes(i).to_vec();
        out.sort_unstable();
        Ok(out)
    }

    /// Edge ids incident to `i`, in edge order.
    pub fn incident_edges(&self, i: usize) -> Result<Vec<u32>> {
        self.check_node(i)?;
        Ok(self.adj_edges[self.adjacency_range(i)].to_vec())
    }

    /// Incident (neighbor, edge id) pairs; hot-path accessor, no allocation.
    pub fn incident(&self, i: usize) -> impl Iterator<Item = (u32, u32)> + '_ {
        let r = self.adjacency_range(i);
        self.adj_nodes[r.clone()].iter().copied().zip(self.adj_edges[r].iter().copied())
    }

    /// Edge id connecting `i` and `j`, if any.
    pub fn edge_between(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.num_nodes || j >= self.num_nodes {
            return None;
        }
        let (a, b) = if self.degree(i) <= self.degree(j) { (i, j) } else { (j, i) };
        self.incident(a).find(|&(n, _)| n as usize == b).map(|(_, e)| e as usize)
    }

    fn check_node(&self, i: usize) -> Result<()> {
        if i >= self.num_nodes {
            return Err(Error::IndexOutOfRange(format!(
                "node {i} out of range 0..{}",
                self.num_nodes
            )));
        }
        Ok(())
    }

    /// Euclidean length of each edge, in input units.
    pub fn edge_lengths(&self) -> Vec<f64> {
        self.edges
            .iter()
            .map(|&[t, h]| {
                let a = self.coords[t as usize];
                let b = self.coords[h as usize];
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
            })
            .collect()
    }

    // ---- graph gradient kernels (shared by the metric, flow, and tape layers) ----

    /// Applies the incidence operator: out[α] = x[head(α)] − x[tail(α)].
    pub fn edge_diff(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let cols = x.ncols();
        let mut out = Array2::zeros((self.num_edges(), cols));
        for (alpha, &[t, h]) in self.edges.iter().enumerate() {
            let xt = x.row(t as usize);
            let xh = x.row(h as usize);
            let mut row = out.row_mut(alpha);
            for c in 0..cols {
                row[c] = xh[c] - xt[c];
            }
        }
        out
    }

    /// Applies the transposed incidence operator:
    /// out[i] = Σ_α (+e[α] if i = head(α), −e[α] if i = tail(α)).
    pub fn edge_diff_t(&self, e: ArrayView2<f64>) -> Array2<f64> {
        let cols = e.ncols();
        let mut out = Array2::zeros((self.num_nodes, cols));
        for (alpha, &[t, h]) in self.edges.iter().enumerate() {
            let er = e.row(alpha);
            {
                let mut rt = out.row_mut(t as usize);
                for c in 0..cols {
                    rt[c] -= er[c];
                }
            }
            let mut rh = out.row_mut(h as usize);
            for c in 0..cols {
                rh[c] += er[c];
            }
        }
        out
    }

    /// Per-node sum of an edge quantity over incident edges.
    pub fn incident_sum(&self, w: &[f64]) -> Vec<f64> {
        debug_assert_eq!(w.len(), self.num_edges());
        let mut out = vec![0.0; self.num_nodes];
        for (alpha, &[t, h]) in self.edges.iter().enumerate() {
            out[t as usize] += w[alpha];
            out[h as usize] += w[alpha];
        }
        out
    }
}

/// Sparse E×V incidence matrix in CSR form: row α holds −1 at tail(α) and +1
/// at head(α), entries stored in ascending column order, rows in edge order.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrix {
    num_nodes: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    data: Vec<f64>,
}

/// Assembles the incidence matrix of a validated graph. Deterministic:
/// identical graphs produce identical sparse layouts.
pub fn build_incidence(graph: &Graph) -> IncidenceMatrix {
    let ne = graph.num_edges();
    let mut indptr = Vec::with_capacity(ne + 1);
    let mut indices = Vec::with_capacity(2 * ne);
    let mut data = Vec::with_capacity(2 * ne);
    indptr.push(0);
    for &[t, h] in graph.edges() {
        if t < h {
            indices.push(t);
            data.push(-1.0);
            indices.push(h);
            data.push(1.0);
        } else {
            indices.push(h);
            data.push(1.0);
            indices.push(t);
            data.push(-1.0);
        }
        indptr.push(indices.len());
    }
    IncidenceMatrix {
        num_nodes: graph.num_nodes(),
        indptr,
        indices,
        data,
    }
}

impl IncidenceMatrix {
    pub fn num_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn num_cols(&self) -> usize {
        self.num_nodes
    }

    /// Row entries as (column, value) pairs.
    pub fn row(&self, alpha: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        let r = self.indptr[alpha]..self.indptr[alpha + 1];
        self.indices[r.clone()].iter().copied().zip(self.data[r].iter().copied())
    }

    /// Dense matrix–matrix product d₀ · x, x of shape V×C.
    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.num_rows(), x.ncols()));
        for alpha in 0..self.num_rows() {
            for (col, val) in self.row(alpha) {
                let xr = x.row(col as usize);
                let mut or = out.row_mut(alpha);
                for c in 0..x.ncols() {
                    or[c] += val * xr[c];
                }
            }
        }
        out
    }

    /// Dense matrix–matrix product d₀ᵀ · e, e of shape E×C.
    pub fn apply_t(&self, e: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.num_cols(), e.ncols()));
        for alpha in 0..self.num_rows() {
            let er = e.row(alpha);
            for (col, val) in self.row(alpha) {
                let mut or = out.row_mut(col as usize);
                for c in 0..e.ncols() {
                    or[c] += val * er[c];
                }
            }
        }
        out
    }

    /// Dense representation, for diagnostics on small graphs.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.num_rows(), self.num_cols()));
        for alpha in 0..self.num_rows() {
            for (col, val) in self.row(alpha) {
                out[[alpha, col as usize]] = val;
            }
        }
        out
    }
}

/// Induced subgraph plus the bidirectional node map and the edge map back
/// into the parent graph.
#[derive(Debug, Clone)]
pub struct SubgraphSlice {
    pub graph: Graph,
    /// Local node id → parent node id, ascending in parent id.
    pub node_map: Vec<u32>,
    /// Parent node id → local node id, `None` outside the slice.
    pub global_to_local: Vec<Option<u32>>,
    /// Local edge id → parent edge id, ascending in parent id.
    pub edge_map: Vec<u32>,
}

/// Extracts the induced subgraph on `node_subset` (deduplicated, sorted).
/// Edges are exactly the parent edges with both endpoints in the subset, in
/// parent edge order. Cut edges are dropped; overlap between slices is
/// expressed purely through subset overlap.
pub fn extract_subgraph(graph: &Graph, node_subset: &[usize]) -> Result<SubgraphSlice> {
    if node_subset.is_empty() {
        return Err(Error::InvalidGraph("subgraph node subset is empty".into()));
    }
    let mut subset: Vec<usize> = node_subset.to_vec();
    subset.sort_unstable();
    subset.dedup();
    if *subset.last().unwrap() >= graph.num_nodes() {
        return Err(Error::IndexOutOfRange(format!(
            "subset node {} out of range 0..{}",
            subset.last().unwrap(),
            graph.num_nodes()
        )));
    }

    let mut global_to_local = vec![None; graph.num_nodes()];
    for (local, &g) in subset.iter().enumerate() {
        global_to_local[g] = Some(local as u32);
    }

    let mut edges = Vec::new();
    let mut edge_map = Vec::new();
    for (alpha, &[t, h]) in graph.edges().iter().enumerate() {
        if let (Some(lt), Some(lh)) = (global_to_local[t as usize], global_to_local[h as usize]) {
            edges.push([lt, lh]);
            edge_map.push(alpha as u32);
        }
    }

    let coords: Vec<[f64; 2]> = subset.iter().map(|&g| graph.coords()[g]).collect();
    let sub = Graph::new_subgraph(subset.len(), edges, coords)?;
    Ok(SubgraphSlice {
        graph: sub,
        node_map: subset.iter().map(|&g| g as u32).collect(),
        global_to_local,
        edge_map,
    })
}

/// On-disk schema of a graph file; unknown fields are rejected.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    num_nodes: usize,
    coords: Vec<[f64; 2]>,
    edges: Vec<[u32; 2]>,
}

pub fn save_graph(graph: &Graph, path: &Path) -> Result<()> {
    let file = GraphFile {
        num_nodes: graph.num_nodes(),
        coords: graph.coords().to_vec(),
        edges: graph.edges().to_vec(),
    };
    let json = serde_json::to_string(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_graph(path: &Path) -> Result<Graph> {
    let bytes = std::fs::read(path)?;
    let file: GraphFile = serde_json::from_slice(&bytes)?;
    Graph::new(file.num_nodes, file.edges, file.coords)
}
