//! Per-cell geometric quality features.

use rayon::prelude::*;

use super::{MeshError, Point, Result, StructuredMesh};

/// Cells with signed area at or below this (squared mesh units) are rejected.
pub const DEGENERATE_AREA: f64 = 1e-14;

pub const NUM_CELL_FEATURES: usize = 6;

/// Column names of the per-cell feature vector, in order.
pub const FEATURE_NAMES: [&str; NUM_CELL_FEATURES] = [
    "area",
    "aspect_ratio",
    "skewness",
    "orthogonality_dev",
    "smoothness",
    "distribution",
];

/// Aspect ratio of a triangle from its side lengths: longest side over
/// `4 * sqrt(3) * area`, with the area from Heron's formula.
///
/// This is the literal textbook expression, so an equilateral triangle of
/// unit side scores 1/3 and the value scales with inverse length.
pub fn aspect_ratio_tri(l0: f64, l1: f64, l2: f64) -> Result<f64> {
    let degenerate = || MeshError::DegenerateTriangle(l0, l1, l2);
    if !(l0 > 0.0 && l1 > 0.0 && l2 > 0.0) {
        return Err(degenerate());
    }
    let longest = l0.max(l1).max(l2);
    let rest = l0 + l1 + l2 - longest;
    if rest <= longest {
        return Err(degenerate());
    }
    let s = 0.5 * (l0 + l1 + l2);
    let area_sq = s * (s - l0) * (s - l1) * (s - l2);
    if !(area_sq > 0.0) {
        return Err(degenerate());
    }
    Ok(longest / (4.0 * 3f64.sqrt() * area_sq.sqrt()))
}

/// Angle skewness: `max[(q_max - q_ideal) / (180 - q_ideal), (q_ideal - q_min) / q_ideal]`
/// clamped to `[0, 1]`. Angles in degrees.
pub fn skewness(q_max: f64, q_min: f64, q_ideal: f64) -> Result<f64> {
    let ok = q_ideal > 0.0
        && q_ideal < 180.0
        && 0.0 <= q_min
        && q_min <= q_ideal
        && q_ideal <= q_max
        && q_max <= 360.0;
    if !ok {
        return Err(MeshError::DomainError(format!(
            "need 0 <= q_min <= q_ideal <= q_max <= 360 and 0 < q_ideal < 180, got \
             q_max={q_max}, q_min={q_min}, q_ideal={q_ideal}"
        )));
    }
    let over = (q_max - q_ideal) / (180.0 - q_ideal);
    let under = (q_ideal - q_min) / q_ideal;
    Ok(over.max(under).clamp(0.0, 1.0))
}

/// Interior corner angles (degrees) of a counter-clockwise quad.
pub fn corner_angles(c: &[Point; 4]) -> [f64; 4] {
    std::array::from_fn(|k| {
        let v = c[k];
        let to_next = c[(k + 1) % 4].sub(v);
        let to_prev = c[(k + 3) % 4].sub(v);
        let a = to_next
            .cross(to_prev)
            .atan2(to_next.dot(to_prev))
            .to_degrees();
        if a < 0.0 {
            a + 360.0
        } else {
            a
        }
    })
}

fn signed_area(c: &[Point; 4]) -> f64 {
    0.5 * (0..4).map(|k| c[k].cross(c[(k + 1) % 4])).sum::<f64>()
}

fn centroid(c: &[Point; 4]) -> Point {
    Point::new(
        0.25 * (c[0].x + c[1].x + c[2].x + c[3].x),
        0.25 * (c[0].y + c[1].y + c[2].y + c[3].y),
    )
}

fn checked_area(mesh: &StructuredMesh, ci: usize, cj: usize) -> Result<f64> {
    let area = signed_area(&mesh.cell_corners(ci, cj));
    if area <= DEGENERATE_AREA {
        return Err(MeshError::DegenerateCell { ci, cj, area });
    }
    Ok(area)
}

/// Worst triangle aspect ratio over the four triangles obtained by cutting
/// the quad along each diagonal.
fn quad_aspect_ratio(c: &[Point; 4], ci: usize, cj: usize, area: f64) -> Result<f64> {
    const TRIS: [[usize; 3]; 4] = [[0, 1, 2], [0, 2, 3], [1, 2, 3], [1, 3, 0]];
    let mut worst = 0.0f64;
    for [a, b, d] in TRIS {
        let ar = aspect_ratio_tri(c[a].dist(c[b]), c[b].dist(c[d]), c[d].dist(c[a]))
            .map_err(|_| MeshError::DegenerateCell { ci, cj, area })?;
        worst = worst.max(ar);
    }
    Ok(worst)
}

fn edge_neighbors(
    mesh: &StructuredMesh,
    ci: usize,
    cj: usize,
) -> impl Iterator<Item = (usize, usize)> {
    let (nci, ncj) = mesh.cell_dims();
    let cand = [
        (ci.checked_sub(1), Some(cj)),
        ((ci + 1 < nci).then_some(ci + 1), Some(cj)),
        (Some(ci), cj.checked_sub(1)),
        (Some(ci), (cj + 1 < ncj).then_some(cj + 1)),
    ];
    cand.into_iter().filter_map(|(a, b)| Some((a?, b?)))
}

/// Geometric quality of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellQuality {
    pub area: f64,
    pub aspect_ratio: f64,
    pub skewness: f64,
    /// Largest deviation of a corner angle from 90 degrees.
    pub orthogonality_dev: f64,
    /// Largest area ratio (either way round) against an edge neighbour.
    pub smoothness: f64,
    /// Coefficient of variation of centroid distances to edge neighbours.
    pub distribution: f64,
}

impl CellQuality {
    pub fn to_array(&self) -> [f64; NUM_CELL_FEATURES] {
        [
            self.area,
            self.aspect_ratio,
            self.skewness,
            self.orthogonality_dev,
            self.smoothness,
            self.distribution,
        ]
    }
}

/// The six per-cell features in [`FEATURE_NAMES`] order.
pub fn cell_features(
    mesh: &StructuredMesh,
    ci: usize,
    cj: usize,
) -> Result<[f64; NUM_CELL_FEATURES]> {
    cell_quality(mesh, ci, cj).map(|q| q.to_array())
}

pub(crate) fn cell_quality(mesh: &StructuredMesh, ci: usize, cj: usize) -> Result<CellQuality> {
    let (nci, ncj) = mesh.cell_dims();
    if ci >= nci || cj >= ncj {
        return Err(MeshError::IndexOutOfRange { ci, cj });
    }
    let corners = mesh.cell_corners(ci, cj);
    let area = checked_area(mesh, ci, cj)?;
    let aspect_ratio = quad_aspect_ratio(&corners, ci, cj, area)?;

    let angles = corner_angles(&corners);
    let q_max = angles.iter().copied().fold(90.0f64, f64::max);
    let q_min = angles.iter().copied().fold(90.0f64, f64::min);
    let skew = skewness(q_max, q_min, 90.0)?;
    let orthogonality_dev = angles.iter().map(|a| (a - 90.0).abs()).fold(0.0, f64::max);

    let here = centroid(&corners);
    let mut smoothness = 1.0f64;
    let mut dists = Vec::with_capacity(4);
    for (ni, nj) in edge_neighbors(mesh, ci, cj) {
        let other = checked_area(mesh, ni, nj)?;
        smoothness = smoothness.max(area / other).max(other / area);
        dists.push(here.dist(centroid(&mesh.cell_corners(ni, nj))));
    }
    let distribution = if dists.len() < 2 {
        0.0
    } else {
        let n = dists.len() as f64;
        let mean = dists.iter().sum::<f64>() / n;
        let var = dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        var.sqrt() / mean
    };

    Ok(CellQuality {
        area,
        aspect_ratio,
        skewness: skew,
        orthogonality_dev,
        smoothness,
        distribution,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// Per-cell quality table with per-metric aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub rows: Vec<(usize, usize, CellQuality)>,
    /// One summary per entry of [`FEATURE_NAMES`].
    pub summary: [MetricSummary; NUM_CELL_FEATURES],
}

impl QualityReport {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        FEATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|k| &self.summary[k])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("ci,cj,");
        out.push_str(&FEATURE_NAMES.join(","));
        out.push('\n');
        for (ci, cj, q) in &self.rows {
            let vals: Vec<String> = q.to_array().iter().map(f64::to_string).collect();
            out.push_str(&format!("{ci},{cj},{}\n", vals.join(",")));
        }
        out
    }
}

/// Quality of every cell, row-major over the cell lattice, plus min/max/mean
/// per metric. The first degenerate cell in row-major order is reported.
pub fn mesh_quality_report(mesh: &StructuredMesh) -> Result<QualityReport> {
    let results: Vec<Result<CellQuality>> = (0..mesh.cell_count())
        .into_par_iter()
        .map(|c| {
            let (ci, cj) = mesh.cell_coords(c);
            cell_quality(mesh, ci, cj)
        })
        .collect();

    let mut rows = Vec::with_capacity(results.len());
    for (c, r) in results.into_iter().enumerate() {
        let (ci, cj) = mesh.cell_coords(c);
        rows.push((ci, cj, r?));
    }

    let summary = std::array::from_fn(|k| {
        let mut s = MetricSummary {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            mean: 0.0,
        };
        for (_, _, q) in &rows {
            let v = q.to_array()[k];
            s.min = s.min.min(v);
            s.max = s.max.max(v);
            s.mean += v;
        }
        s.mean /= rows.len() as f64;
        s
    });
    Ok(QualityReport { rows, summary })
}
