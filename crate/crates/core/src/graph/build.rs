//! Point-based and element-based graph construction.

use std::collections::HashMap;

use rayon::prelude::*;

use super::{CsrMatrix, GraphError, GraphMode, Result, SparseGraph};
use crate::mesh::{self, Point, StructuredMesh};

/// Strength between two quads that share exactly one grid side.
pub const SHARED_EDGE_STRENGTH: u32 = 6;

/// Default proximity radius as a multiple of the shortest mesh edge.
pub const DEFAULT_RADIUS_FACTOR: f64 = 1.5;

pub fn default_radius(mesh: &StructuredMesh) -> f64 {
    DEFAULT_RADIUS_FACTOR * mesh.min_edge_length()
}

/// Grid-neighbour graph over the mesh nodes. Features are `[x, y, boundary_flag]`.
pub fn build_node_adjacency(mesh: &StructuredMesh) -> SparseGraph {
    let features = node_features(mesh);
    let pairs = structural_pairs(mesh);
    SparseGraph::from_undirected(GraphMode::Point, mesh.node_count(), 3, features, pairs)
        .expect("grid adjacency is a valid graph")
}

fn node_features(mesh: &StructuredMesh) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * mesh.node_count());
    for j in 0..mesh.nj() {
        for i in 0..mesh.ni() {
            let p = mesh.node(i, j);
            out.extend_from_slice(&[p.x, p.y, f64::from(u8::from(mesh.is_boundary_node(i, j)))]);
        }
    }
    out
}

fn structural_pairs(mesh: &StructuredMesh) -> Vec<(usize, usize)> {
    let (ni, nj) = (mesh.ni(), mesh.nj());
    let mut pairs = Vec::with_capacity(nj * (ni - 1) + ni * (nj - 1));
    for j in 0..nj {
        for i in 0..ni {
            let k = mesh.node_index(i, j);
            if i + 1 < ni {
                pairs.push((k, k + 1));
            }
            if j + 1 < nj {
                pairs.push((k, k + ni));
            }
        }
    }
    pairs
}

/// All unordered pairs `(i, j)`, `i < j`, closer than `r_p`, found with a
/// uniform hash grid of cell size `r_p`. Sorted lexicographically.
pub fn proximity_edges(points: &[Point], r_p: f64) -> Result<Vec<(usize, usize)>> {
    if !(r_p > 0.0) || !r_p.is_finite() {
        return Err(GraphError::NonPositiveRadius(r_p));
    }
    let key = |p: Point| ((p.x / r_p).floor() as i64, (p.y / r_p).floor() as i64);
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (k, &p) in points.iter().enumerate() {
        buckets.entry(key(p)).or_default().push(k);
    }

    let mut pairs = Vec::new();
    for (k, &p) in points.iter().enumerate() {
        let (bx, by) = key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(bucket) = buckets.get(&(bx + dx, by + dy)) else {
                    continue;
                };
                for &other in bucket {
                    if other > k && p.dist(points[other]) < r_p {
                        pairs.push((k, other));
                    }
                }
            }
        }
    }
    pairs.sort_unstable();
    Ok(pairs)
}

/// Grid adjacency united with proximity-distance edges of radius `r_p`.
pub fn build_point_graph(mesh: &StructuredMesh, r_p: f64) -> Result<SparseGraph> {
    let mut pairs = structural_pairs(mesh);
    pairs.extend(proximity_edges(mesh.coords(), r_p)?);
    Ok(SparseGraph::from_undirected(
        GraphMode::Point,
        mesh.node_count(),
        3,
        node_features(mesh),
        pairs,
    )?)
}

/// Node-by-element 0/1 membership matrix; cells are numbered row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceMatrix(CsrMatrix);

impl IncidenceMatrix {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.0
    }

    pub fn node_count(&self) -> usize {
        self.0.rows()
    }

    pub fn element_count(&self) -> usize {
        self.0.cols()
    }
}

pub fn build_incidence(mesh: &StructuredMesh) -> IncidenceMatrix {
    let (nci, ncj) = mesh.cell_dims();
    let mut triplets = Vec::with_capacity(4 * mesh.cell_count());
    for cj in 0..ncj {
        for ci in 0..nci {
            let cell = mesh.cell_index(ci, cj);
            for node in mesh.cell_nodes(ci, cj) {
                triplets.push((node, cell, 1));
            }
        }
    }
    IncidenceMatrix(CsrMatrix::from_triplets(
        mesh.node_count(),
        mesh.cell_count(),
        &triplets,
    ))
}

/// Element-by-element strength matrix `E^T A_N E`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrengthMatrix(CsrMatrix);

impl StrengthMatrix {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.0
    }

    pub fn get(&self, a: usize, b: usize) -> u32 {
        self.0.get(a, b)
    }

    pub fn to_dense(&self) -> Vec<Vec<u32>> {
        self.0.to_dense()
    }
}

/// Diagonal of the node adjacency used when forming the strength matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagonalMode {
    /// Zero diagonal; shared sides have strength 6.
    Zero,
    /// Unit diagonal (self-connected nodes); shared sides have strength 8.
    Ones,
}

impl DiagonalMode {
    pub fn shared_edge_strength(self) -> u32 {
        match self {
            DiagonalMode::Zero => SHARED_EDGE_STRENGTH,
            DiagonalMode::Ones => SHARED_EDGE_STRENGTH + 2,
        }
    }
}

pub fn strength_matrix(e: &IncidenceMatrix, a_n: &SparseGraph) -> Result<StrengthMatrix> {
    strength_matrix_with(e, a_n, DiagonalMode::Zero)
}

/// `E^T A_N E` as two sparse-sparse products.
pub fn strength_matrix_with(
    e: &IncidenceMatrix,
    a_n: &SparseGraph,
    diag: DiagonalMode,
) -> Result<StrengthMatrix> {
    if a_n.n() != e.node_count() {
        return Err(GraphError::DimensionMismatch(format!(
            "node adjacency has {} nodes, incidence has {} rows",
            a_n.n(),
            e.node_count()
        )));
    }
    let mut triplets: Vec<(usize, usize, u32)> =
        a_n.edges().iter().map(|&(r, c)| (r, c, 1)).collect();
    if diag == DiagonalMode::Ones {
        triplets.extend((0..a_n.n()).map(|k| (k, k, 1)));
    }
    let adj = CsrMatrix::from_triplets(a_n.n(), a_n.n(), &triplets);
    let et = e.matrix().transpose();
    let s = et
        .matmul(&adj)
        .and_then(|m| m.matmul(e.matrix()))
        .expect("dimensions checked above");
    Ok(StrengthMatrix(s))
}

/// Element adjacency: `A_ij = 1` iff `S_ij = 6` and `i != j`.
pub fn threshold_adjacency(s: &StrengthMatrix) -> Vec<(usize, usize)> {
    threshold_adjacency_at(s, SHARED_EDGE_STRENGTH)
}

/// Directed pairs `(i, j)`, `i != j`, with `S_ij == strength`, sorted.
pub fn threshold_adjacency_at(s: &StrengthMatrix, strength: u32) -> Vec<(usize, usize)> {
    let m = s.matrix();
    (0..m.rows())
        .flat_map(|r| {
            m.row(r)
                .filter(move |&(c, v)| c != r && v == strength)
                .map(move |(c, _)| (r, c))
        })
        .collect()
}

/// Element graph: one node per cell carrying its six quality features,
/// edges between cells that share a grid side.
pub fn build_element_graph(mesh: &StructuredMesh) -> Result<SparseGraph> {
    build_element_graph_with(mesh, DiagonalMode::Zero)
}

pub fn build_element_graph_with(mesh: &StructuredMesh, diag: DiagonalMode) -> Result<SparseGraph> {
    let mut features = Vec::with_capacity(mesh.cell_count() * mesh::NUM_CELL_FEATURES);
    for c in 0..mesh.cell_count() {
        let (ci, cj) = mesh.cell_coords(c);
        features.extend_from_slice(&mesh::cell_features(mesh, ci, cj)?);
    }
    let e = build_incidence(mesh);
    let a_n = build_node_adjacency(mesh);
    let s = strength_matrix_with(&e, &a_n, diag)?;
    let edges = threshold_adjacency_at(&s, diag.shared_edge_strength());
    Ok(SparseGraph::new(
        GraphMode::Element,
        mesh.cell_count(),
        mesh::NUM_CELL_FEATURES,
        features,
        edges,
    )?
    .with_name(mesh.name()))
}

/// Converts many meshes on a pool of `jobs` threads. Output order follows input.
pub fn convert_batch(
    meshes: &[StructuredMesh],
    mode: GraphMode,
    radius: Option<f64>,
    jobs: usize,
) -> Vec<Result<SparseGraph>> {
    let convert = |m: &StructuredMesh| match mode {
        GraphMode::Element => build_element_graph(m),
        GraphMode::Point => {
            let r = radius.unwrap_or_else(|| default_radius(m));
            build_point_graph(m, r).map(|g| g.with_name(m.name()))
        }
    };
    match rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
    {
        Ok(pool) => pool.install(|| meshes.par_iter().map(convert).collect()),
        Err(_) => meshes.iter().map(convert).collect(),
    }
}
