//! Mesh-to-graph conversion and the graph exchange formats.

mod build;
mod format;
mod sparse;

pub use build::{
    build_element_graph, build_element_graph_with, build_incidence, build_node_adjacency,
    build_point_graph, convert_batch, default_radius, proximity_edges, strength_matrix,
    strength_matrix_with, threshold_adjacency, threshold_adjacency_at, DiagonalMode,
    IncidenceMatrix, StrengthMatrix, DEFAULT_RADIUS_FACTOR, SHARED_EDGE_STRENGTH,
};
pub use format::{read_graph_binary, read_graph_json, write_graph_binary, write_graph_json};
pub use sparse::CsrMatrix;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::MeshError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("proximity radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("graph format error: {0}")]
    Format(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    /// Nodes are mesh grid points, features `[x, y, boundary_flag]`.
    Point,
    /// Nodes are mesh cells, features are the six cell quality features.
    Element,
}

impl GraphMode {
    pub fn code(self) -> u8 {
        match self {
            GraphMode::Point => 0,
            GraphMode::Element => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(GraphMode::Point),
            1 => Some(GraphMode::Element),
            _ => None,
        }
    }
}

impl std::str::FromStr for GraphMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "point" => Ok(GraphMode::Point),
            "element" => Ok(GraphMode::Element),
            other => Err(format!("unknown graph mode {other:?}")),
        }
    }
}

/// Node features plus a symmetric coordinate-format adjacency.
///
/// Edges are stored in both directions, sorted lexicographically, without
/// self-loops or duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    pub name: String,
    pub mode: GraphMode,
    n: usize,
    f: usize,
    features: Vec<f64>,
    edges: Vec<(usize, usize)>,
    pub label: Option<usize>,
}

impl SparseGraph {
    /// Validates and stores a graph whose edge list already holds both directions.
    pub fn new(
        mode: GraphMode,
        n: usize,
        f: usize,
        features: Vec<f64>,
        mut edges: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if features.len() != n * f {
            return Err(GraphError::InvalidGraph(format!(
                "feature matrix has {} values, expected {n}x{f}",
                features.len()
            )));
        }
        if let Some(k) = features.iter().position(|v| !v.is_finite()) {
            return Err(GraphError::InvalidGraph(format!(
                "non-finite feature at node {}",
                k / f.max(1)
            )));
        }
        edges.sort_unstable();
        for w in edges.windows(2) {
            if w[0] == w[1] {
                return Err(GraphError::InvalidGraph(format!(
                    "duplicate edge {:?}",
                    w[0]
                )));
            }
        }
        for &(r, c) in &edges {
            if r >= n || c >= n {
                return Err(GraphError::InvalidGraph(format!(
                    "edge ({r}, {c}) out of range for {n} nodes"
                )));
            }
            if r == c {
                return Err(GraphError::InvalidGraph(format!("self-loop at node {r}")));
            }
            if edges.binary_search(&(c, r)).is_err() {
                return Err(GraphError::InvalidGraph(format!(
                    "edge ({r}, {c}) has no reverse"
                )));
            }
        }
        Ok(Self {
            name: String::new(),
            mode,
            n,
            f,
            features,
            edges,
            label: None,
        })
    }

    /// Builds a graph from unordered pairs, storing each in both directions.
    pub fn from_undirected(
        mode: GraphMode,
        n: usize,
        f: usize,
        features: Vec<f64>,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut edges: Vec<(usize, usize)> = pairs
            .into_iter()
            .flat_map(|(a, b)| [(a, b), (b, a)])
            .collect();
        edges.sort_unstable();
        edges.dedup();
        Self::new(mode, n, f, features, edges)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.f..(i + 1) * self.f]
    }

    /// Directed edge list (both directions), sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Number of undirected edges.
    pub fn undirected_edge_count(&self) -> usize {
        self.edges.len() / 2
    }

    /// Unordered pairs `(a, b)` with `a < b`, sorted.
    pub fn undirected_pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().copied().filter(|(a, b)| a < b).collect()
    }

    pub fn degree(&self, i: usize) -> usize {
        let lo = self.edges.partition_point(|e| e.0 < i);
        let hi = self.edges.partition_point(|e| e.0 <= i);
        hi - lo
    }

    pub fn to_dense_adjacency(&self) -> Vec<Vec<u8>> {
        let mut a = vec![vec![0u8; self.n]; self.n];
        for &(r, c) in &self.edges {
            a[r][c] = 1;
        }
        a
    }
}
