//! Mesh to graph conversion, node feature scaling and the symmetric
//! degree normalization used by the graph convolution.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::mesh_io::{validate, Issue, Mesh};

/// Raw per-axis standard deviations below this are treated as a flat axis.
pub const FLAT_AXIS_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid mesh: {}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidMesh(Vec<Issue>),
}

impl GraphError {
    pub fn code(&self) -> &'static str {
        "invalid_mesh"
    }
}

/// Undirected graph with one self-loop per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub n_nodes: usize,
    /// Unordered pairs stored as `(i, j)` with `i <= j`, sorted, deduplicated,
    /// self-loops included.
    pub edges: Vec<(usize, usize)>,
    /// `|N(i)|`, counting `i` itself once.
    pub degree: Vec<usize>,
    /// Original node id to dense index (order of appearance in the mesh).
    pub node_index: HashMap<u64, usize>,
    /// Original node id for every dense index.
    pub node_ids: Vec<u64>,
}

impl Graph {
    /// Sorted neighbor lists including the node itself.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            if i != j {
                adj[j].push(i);
            }
        }
        for row in &mut adj {
            row.sort_unstable();
        }
        adj
    }

    pub fn non_loop_edge_count(&self) -> usize {
        self.edges.iter().filter(|(i, j)| i != j).count()
    }

    /// Edge set expressed in original node ids, `(min, max)` per pair.
    pub fn id_edges(&self) -> BTreeSet<(u64, u64)> {
        self.edges
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (self.node_ids[i], self.node_ids[j]);
                (a.min(b), a.max(b))
            })
            .collect()
    }

    /// Debug dump: one `i j` line per edge, dense indices.
    pub fn edge_list(&self) -> String {
        self.edges.iter().map(|(i, j)| format!("{i} {j}\n")).collect()
    }
}

/// Builds the self-looped perimeter graph of a mesh.
///
/// Quads contribute their four sides and triangles their three; diagonals are
/// never added. Orphan nodes are kept as isolated vertices.
pub fn mesh_to_graph(mesh: &Mesh) -> Result<Graph, GraphError> {
    let report = validate(mesh);
    if report.has_fatal() {
        return Err(GraphError::InvalidMesh(report.fatal().cloned().collect()));
    }
    let node_ids: Vec<u64> = mesh.nodes.iter().map(|n| n.id).collect();
    let node_index: HashMap<u64, usize> = node_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let n = node_ids.len();

    let mut edges: BTreeSet<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
    for e in &mesh.elements {
        for (a, b) in e.edges() {
            let (a, b) = (node_index[&a], node_index[&b]);
            edges.insert((a.min(b), a.max(b)));
        }
    }
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();
    let mut degree = vec![0usize; n];
    for &(i, j) in &edges {
        degree[i] += 1;
        if i != j {
            degree[j] += 1;
        }
    }
    Ok(Graph { n_nodes: n, edges, degree, node_index, node_ids })
}

/// Per-part, per-axis standardized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    pub rows: Vec<[f64; 3]>,
    pub mean: [f64; 3],
    /// Raw sample standard deviation (n - 1 denominator) before scaling.
    pub std: [f64; 3],
}

impl NodeFeatures {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Zero-centers each axis and divides by its sample standard deviation.
///
/// Axes whose raw deviation is below [`FLAT_AXIS_EPS`] are set to exactly
/// zero instead of being divided.
pub fn scale_features(mesh: &Mesh) -> NodeFeatures {
    let n = mesh.nodes.len();
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    let mut rows: Vec<[f64; 3]> = mesh.nodes.iter().map(|nd| nd.xyz).collect();
    if n == 0 {
        return NodeFeatures { rows, mean, std };
    }
    for axis in 0..3 {
        let m = rows.iter().map(|r| r[axis]).sum::<f64>() / n as f64;
        // second pass removes the residual bias of the first
        let m = m + rows.iter().map(|r| r[axis] - m).sum::<f64>() / n as f64;
        let ss: f64 = rows.iter().map(|r| (r[axis] - m).powi(2)).sum();
        let s = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
        mean[axis] = m;
        std[axis] = s;
        for r in rows.iter_mut() {
            r[axis] = if s < FLAT_AXIS_EPS { 0.0 } else { (r[axis] - m) / s };
        }
    }
    NodeFeatures { rows, mean, std }
}

/// `c_ij = sqrt(deg i) * sqrt(deg j)` for every edge, aligned with `graph.edges`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormCoeff {
    pub values: Vec<f64>,
}

pub fn norm_coeffs(graph: &Graph) -> NormCoeff {
    let values = graph
        .edges
        .iter()
        // sqrt(d_i d_j) in one rounding; exact (= d_i) on self-loops
        .map(|&(i, j)| ((graph.degree[i] * graph.degree[j]) as f64).sqrt())
        .collect();
    NormCoeff { values }
}
