//! Structured 2D meshes: storage, file formats and geometric quality metrics.
//!
//! Nodes are stored i-fastest: node `(i, j)` lives at `j * ni + i`. Cells are
//! numbered the same way over the `(ni - 1) x (nj - 1)` cell lattice, and the
//! corners of cell `(ci, cj)` are visited counter-clockwise starting from
//! `(ci, cj)`.

mod io;
mod quality;

pub use io::{parse_native, parse_plot3d, write_native, write_plot3d};
pub use quality::{
    aspect_ratio_tri, cell_features, corner_angles, mesh_quality_report, skewness, CellQuality,
    MetricSummary, QualityReport, DEGENERATE_AREA, FEATURE_NAMES, NUM_CELL_FEATURES,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated data: expected {expected} values, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("non-finite coordinate at node {0}")]
    NonFiniteCoordinate(usize),
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("length mismatch: {field} has {found} entries, expected {expected}")]
    LengthMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid dimensions {ni}x{nj}: need at least 2x2 nodes")]
    InvalidDimensions { ni: usize, nj: usize },
    #[error("degenerate triangle with sides ({0}, {1}, {2})")]
    DegenerateTriangle(f64, f64, f64),
    #[error("angle arguments out of domain: {0}")]
    DomainError(String),
    #[error("cell index ({ci}, {cj}) out of range")]
    IndexOutOfRange { ci: usize, cj: usize },
    #[error("degenerate cell at ({ci}, {cj}): signed area {area:e}")]
    DegenerateCell { ci: usize, cj: usize, area: f64 },
}

pub type Result<T, E = MeshError> = std::result::Result<T, E>;

/// A 2D point in mesh length units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point) -> f64 {
        self.sub(o).norm()
    }
}

/// A curvilinear quadrilateral grid of `ni x nj` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredMesh {
    name: String,
    ni: usize,
    nj: usize,
    coords: Vec<Point>,
}

impl StructuredMesh {
    /// Builds a mesh from i-fastest node coordinates.
    pub fn new(name: impl Into<String>, ni: usize, nj: usize, coords: Vec<Point>) -> Result<Self> {
        if ni < 2 || nj < 2 {
            return Err(MeshError::InvalidDimensions { ni, nj });
        }
        let expected = ni * nj;
        if coords.len() != expected {
            return Err(MeshError::LengthMismatch {
                field: "coords",
                expected,
                found: coords.len(),
            });
        }
        if let Some(k) = coords
            .iter()
            .position(|p| !p.x.is_finite() || !p.y.is_finite())
        {
            return Err(MeshError::NonFiniteCoordinate(k));
        }
        Ok(Self {
            name: name.into(),
            ni,
            nj,
            coords,
        })
    }

    pub fn from_fn(
        name: impl Into<String>,
        ni: usize,
        nj: usize,
        mut f: impl FnMut(usize, usize) -> Point,
    ) -> Result<Self> {
        let mut coords = Vec::with_capacity(ni * nj);
        for j in 0..nj {
            for i in 0..ni {
                coords.push(f(i, j));
            }
        }
        Self::new(name, ni, nj, coords)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn ni(&self) -> usize {
        self.ni
    }

    pub fn nj(&self) -> usize {
        self.nj
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn node_count(&self) -> usize {
        self.ni * self.nj
    }

    pub fn cell_dims(&self) -> (usize, usize) {
        (self.ni - 1, self.nj - 1)
    }

    pub fn cell_count(&self) -> usize {
        (self.ni - 1) * (self.nj - 1)
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * self.ni + i
    }

    pub fn node(&self, i: usize, j: usize) -> Point {
        self.coords[self.node_index(i, j)]
    }

    pub fn cell_index(&self, ci: usize, cj: usize) -> usize {
        cj * (self.ni - 1) + ci
    }

    /// Inverse of [`cell_index`](Self::cell_index).
    pub fn cell_coords(&self, cell: usize) -> (usize, usize) {
        (cell % (self.ni - 1), cell / (self.ni - 1))
    }

    /// Node indices of the four corners of a cell, counter-clockwise in index space.
    pub fn cell_nodes(&self, ci: usize, cj: usize) -> [usize; 4] {
        [
            self.node_index(ci, cj),
            self.node_index(ci + 1, cj),
            self.node_index(ci + 1, cj + 1),
            self.node_index(ci, cj + 1),
        ]
    }

    pub fn cell_corners(&self, ci: usize, cj: usize) -> [Point; 4] {
        self.cell_nodes(ci, cj).map(|k| self.coords[k])
    }

    pub fn is_boundary_node(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i + 1 == self.ni || j + 1 == self.nj
    }

    /// Shortest grid segment length over the whole mesh.
    pub fn min_edge_length(&self) -> f64 {
        let mut best = f64::INFINITY;
        for j in 0..self.nj {
            for i in 0..self.ni {
                let p = self.node(i, j);
                if i + 1 < self.ni {
                    best = best.min(p.dist(self.node(i + 1, j)));
                }
                if j + 1 < self.nj {
                    best = best.min(p.dist(self.node(i, j + 1)));
                }
            }
        }
        best
    }

    /// Applies `f` to every node coordinate.
    pub fn map_coords(&self, mut f: impl FnMut(Point) -> Point) -> Result<Self> {
        let coords = self.coords.iter().map(|&p| f(p)).collect();
        Self::new(self.name.clone(), self.ni, self.nj, coords)
    }

    #[cfg(test)]
    pub(crate) fn coords_mut(&mut self) -> &mut [Point] {
        &mut self.coords
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_single_row() {
        let err = StructuredMesh::new("m", 1, 3, vec![Point::default(); 3]).unwrap_err();
        assert_eq!(err, MeshError::InvalidDimensions { ni: 1, nj: 3 });
    }

    #[test]
    fn rejects_nan() {
        let mut c = vec![Point::new(0.0, 0.0); 4];
        c[2].y = f64::NAN;
        assert_eq!(
            StructuredMesh::new("m", 2, 2, c).unwrap_err(),
            MeshError::NonFiniteCoordinate(2)
        );
    }

    #[test]
    fn index_round_trip() {
        let m = StructuredMesh::from_fn("m", 5, 4, |i, j| Point::new(i as f64, j as f64)).unwrap();
        assert_eq!(m.cell_count(), 12);
        for c in 0..m.cell_count() {
            let (ci, cj) = m.cell_coords(c);
            assert_eq!(m.cell_index(ci, cj), c);
        }
        assert_eq!(m.cell_nodes(1, 2), [11, 12, 17, 16]);
        assert_eq!(m.min_edge_length(), 1.0);
    }
}
