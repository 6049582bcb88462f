use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::build_element_graph;
use crate::mesh::{mesh_quality_report, Point, StructuredMesh};

use super::{DatasetError, DefectFlags, LabeledGraphDataset, Provenance, Result, LABEL_NAMES};

/// A cell is "rough" when its area jumps by at least this factor against a neighbour.
pub const SMOOTHNESS_JUMP: f64 = 1.5;
/// Largest corner-angle deviation (degrees) above which a mesh counts as non-orthogonal.
pub const ORTHO_THRESHOLD: f64 = 10.0;
/// Fraction of rough cells above which a mesh counts as non-smooth.
pub const SMOOTH_THRESHOLD: f64 = 0.5;
/// Largest neighbour-spacing variation above which a mesh counts as badly distributed.
pub const DISTRIB_THRESHOLD: f64 = 0.35;

/// Magnitude ranges sampled by [`make_synthetic`], per defect.
pub const ORTHO_RANGE: (f64, f64) = (0.35, 0.6);
pub const SMOOTH_RANGE: (f64, f64) = (0.3, 0.5);
pub const DISTRIB_RANGE: (f64, f64) = (0.5, 0.8);

const RETRY_SHRINK: f64 = 0.75;
const MAX_RETRIES: usize = 3;
const MAX_LABEL_ATTEMPTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Uniform Cartesian grid with unit-aspect cells.
    Rect,
    /// Polar sector between radii 1 and 2, `i` radial and `j` angular.
    Annulus,
}

impl std::str::FromStr for Profile {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rect" => Ok(Self::Rect),
            "annulus" => Ok(Self::Annulus),
            _ => Err(DatasetError::Format(format!("unknown profile {s:?}"))),
        }
    }
}

/// Base grid before any defect.
///
/// The annulus sector spans `(nj - 1) * dr / 1.5` radians so cells are square
/// at mid radius and corner angles stay within about a degree of 90.
pub fn gen_base_grid(ni: usize, nj: usize, profile: Profile) -> Result<StructuredMesh> {
    if ni < 3 || nj < 3 {
        return Err(DatasetError::DimensionTooSmall { ni, nj });
    }
    let h = 1.0 / (ni - 1) as f64;
    let mesh = match profile {
        Profile::Rect => StructuredMesh::from_fn("rect", ni, nj, |i, j| {
            Point::new(i as f64 * h, j as f64 * h)
        }),
        Profile::Annulus => {
            let dtheta = h / 1.5;
            StructuredMesh::from_fn("annulus", ni, nj, |i, j| {
                let (r, t) = (1.0 + i as f64 * h, j as f64 * dtheta);
                Point::new(r * t.cos(), r * t.sin())
            })
        }
    }?;
    Ok(mesh)
}

/// Per-defect strengths in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Magnitudes {
    pub ortho: f64,
    pub smooth: f64,
    pub distrib: f64,
}

impl Magnitudes {
    pub fn uniform(m: f64) -> Self {
        Self {
            ortho: m,
            smooth: m,
            distrib: m,
        }
    }

    fn scaled(self, f: f64) -> Self {
        Self {
            ortho: self.ortho * f,
            smooth: self.smooth * f,
            distrib: self.distrib * f,
        }
    }
}

/// Bilinear evaluation of the mesh at logical coordinates, extrapolating
/// linearly from the boundary cells.
fn eval_logical(mesh: &StructuredMesh, u: f64, v: f64) -> Point {
    let ci = (u.floor().max(0.0) as usize).min(mesh.ni() - 2);
    let cj = (v.floor().max(0.0) as usize).min(mesh.nj() - 2);
    let (a, b) = (u - ci as f64, v - cj as f64);
    let p00 = mesh.node(ci, cj);
    let p10 = mesh.node(ci + 1, cj);
    let p11 = mesh.node(ci + 1, cj + 1);
    let p01 = mesh.node(ci, cj + 1);
    p00.scale((1.0 - a) * (1.0 - b))
        .add(p10.scale(a * (1.0 - b)))
        .add(p11.scale(a * b))
        .add(p01.scale((1.0 - a) * b))
}

/// Physical length per logical `i` step over logical `j` step, per cell column,
/// measured along the middle `j` line.
fn column_ratios(mesh: &StructuredMesh) -> Vec<f64> {
    let jm = (mesh.nj() - 1) / 2;
    (0..mesh.ni() - 1)
        .map(|ci| {
            let hu = mesh.node(ci, jm).dist(mesh.node(ci + 1, jm));
            let hv = 0.5
                * (mesh.node(ci, jm).dist(mesh.node(ci, jm + 1))
                    + mesh.node(ci + 1, jm).dist(mesh.node(ci + 1, jm + 1)));
            hu / hv
        })
        .collect()
}

/// `∫ ratio(u) du` from `a` to `b` for the piecewise-constant column ratios.
fn integrate_ratio(ratios: &[f64], a: f64, b: f64) -> f64 {
    let mut total = 0.0;
    for (c, &r) in ratios.iter().enumerate() {
        let lo = a.max(c as f64);
        let hi = b.min(c as f64 + 1.0);
        if hi > lo {
            total += r * (hi - lo);
        }
    }
    total
}

fn check_magnitude(m: f64) -> Result<()> {
    if m > 0.0 && m <= 1.0 {
        Ok(())
    } else {
        Err(DatasetError::InvalidMagnitude(m))
    }
}

fn apply_defects(
    mesh: &StructuredMesh,
    flags: DefectFlags,
    mags: Magnitudes,
    rng: &mut Xoshiro256PlusPlus,
) -> Result<StructuredMesh> {
    let (ni, nj) = (mesh.ni(), mesh.nj());
    let (lu, lv) = ((ni - 1) as f64, (nj - 1) as f64);

    let mut u: Vec<f64> = (0..ni).map(|i| i as f64).collect();
    if flags.distrib {
        let p = 1.0 + 2.0 * mags.distrib;
        u.iter_mut().for_each(|x| *x = lu * (*x / lu).powf(p));
    }

    let mut v: Vec<f64> = (0..nj).map(|j| j as f64).collect();
    if flags.smooth {
        let phase = rng.random_bool(0.5);
        let widths: Vec<f64> = (0..nj - 1)
            .map(|k| {
                if (k % 2 == 0) == phase {
                    1.0 + mags.smooth
                } else {
                    1.0 - mags.smooth
                }
            })
            .collect();
        let total: f64 = widths.iter().sum();
        let mut acc = 0.0;
        for (k, w) in widths.iter().enumerate() {
            acc += w;
            v[k + 1] = lv * acc / total;
        }
        v[nj - 1] = lv;
    }

    // Shear: lines inside the band tilt by `phi` in physical space, lines past
    // it keep the accumulated offset.
    let shift: Box<dyn Fn(f64) -> f64> = if flags.ortho {
        let tan = (45.0 * mags.ortho).to_radians().tan();
        let width = (lu / 3.0).max(1.0);
        let start = rng.random_range(0.0..=(lu - width));
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let ratios = column_ratios(mesh);
        Box::new(move |x: f64| sign * tan * integrate_ratio(&ratios, start, x.min(start + width)))
    } else {
        Box::new(|_| 0.0)
    };

    let mut coords = Vec::with_capacity(ni * nj);
    for &vj in &v {
        for &ui in &u {
            coords.push(eval_logical(mesh, ui, vj + shift(ui)));
        }
    }
    Ok(StructuredMesh::new(mesh.name(), ni, nj, coords)?)
}

/// Distorts `mesh` according to `flags`. Composition order is distribution,
/// smoothness, then orthogonality. If the result has a degenerate cell the
/// magnitudes shrink and the injection is retried up to three times.
pub fn inject_defects(
    mesh: &StructuredMesh,
    flags: DefectFlags,
    magnitude: f64,
    seed: u64,
) -> Result<StructuredMesh> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    inject_with(mesh, flags, Magnitudes::uniform(magnitude), &mut rng)
}

pub fn inject_with(
    mesh: &StructuredMesh,
    flags: DefectFlags,
    mags: Magnitudes,
    rng: &mut Xoshiro256PlusPlus,
) -> Result<StructuredMesh> {
    for m in [mags.ortho, mags.smooth, mags.distrib] {
        check_magnitude(m)?;
    }
    let mut mags = mags;
    let mut last = String::new();
    for _ in 0..=MAX_RETRIES {
        let out = apply_defects(mesh, flags, mags, rng)?;
        match mesh_quality_report(&out) {
            Ok(_) => return Ok(out),
            Err(e) => last = e.to_string(),
        }
        mags = mags.scaled(RETRY_SHRINK);
    }
    Err(DatasetError::DefectCollapse(last))
}

/// Mesh-level aggregates the labels are defined by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectMeasures {
    /// Largest corner-angle deviation from 90 degrees.
    pub max_orthogonality_dev: f64,
    /// Fraction of cells whose smoothness is at least [`SMOOTHNESS_JUMP`].
    pub rough_fraction: f64,
    /// Largest per-cell distribution value.
    pub max_distribution: f64,
}

impl DefectMeasures {
    /// The threshold classifier: which defects these aggregates indicate.
    pub fn flags(&self) -> DefectFlags {
        DefectFlags {
            ortho: self.max_orthogonality_dev > ORTHO_THRESHOLD,
            smooth: self.rough_fraction > SMOOTH_THRESHOLD,
            distrib: self.max_distribution > DISTRIB_THRESHOLD,
        }
    }
}

pub fn measure_defects(mesh: &StructuredMesh) -> Result<DefectMeasures> {
    let report = mesh_quality_report(mesh)?;
    let n = report.rows.len() as f64;
    let rough = report
        .rows
        .iter()
        .filter(|(_, _, q)| q.smoothness >= SMOOTHNESS_JUMP)
        .count();
    Ok(DefectMeasures {
        max_orthogonality_dev: report
            .rows
            .iter()
            .map(|r| r.2.orthogonality_dev)
            .fold(0.0, f64::max),
        rough_fraction: rough as f64 / n,
        max_distribution: report
            .rows
            .iter()
            .map(|r| r.2.distribution)
            .fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub per_label: usize,
    pub ni: usize,
    pub nj: usize,
    pub seed: u64,
    pub profile: Profile,
}

impl SynthConfig {
    pub fn new(per_label: usize, ni: usize, nj: usize, seed: u64) -> Self {
        Self {
            per_label,
            ni,
            nj,
            seed,
            profile: Profile::Annulus,
        }
    }
}

/// One synthetic mesh with the flags it was generated for. Item `index`
/// uses the generator seeded with `seed ^ index`; labels cycle through the
/// eight classes.
pub fn synth_mesh(cfg: &SynthConfig, index: usize) -> Result<(StructuredMesh, usize)> {
    let label = index % LABEL_NAMES.len();
    let flags = DefectFlags::from_label(label).expect("label in range");
    let base = gen_base_grid(cfg.ni, cfg.nj, cfg.profile)?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed ^ index as u64);
    let mut last = String::from("no attempt");
    for _ in 0..MAX_LABEL_ATTEMPTS {
        let mut sample = |(lo, hi): (f64, f64)| rng.random_range(lo..=hi);
        let mags = Magnitudes {
            ortho: sample(ORTHO_RANGE),
            smooth: sample(SMOOTH_RANGE),
            distrib: sample(DISTRIB_RANGE),
        };
        let scale = rng.random_range(0.8..1.25);
        let mesh = match inject_with(&base, flags, mags, &mut rng) {
            Ok(m) => m.map_coords(|p| p.scale(scale))?,
            Err(e) => {
                last = e.to_string();
                continue;
            }
        };
        let measured = measure_defects(&mesh)?;
        if measured.flags() == flags {
            let mut mesh = mesh;
            mesh.set_name(format!("synth_{index:05}_{}", LABEL_NAMES[label]));
            return Ok((mesh, label));
        }
        last = format!(
            "measured {measured:?} does not match {}",
            LABEL_NAMES[label]
        );
    }
    Err(DatasetError::DefectCollapse(format!(
        "item {index}: {last}"
    )))
}

/// Balanced synthetic dataset of element graphs, `8 * per_label` items.
pub fn make_synthetic(cfg: &SynthConfig) -> Result<LabeledGraphDataset> {
    if cfg.per_label == 0 {
        return Err(DatasetError::Format("per_label must be at least 1".into()));
    }
    let count = cfg.per_label * LABEL_NAMES.len();
    let items = (0..count)
        .into_par_iter()
        .map(|k| {
            let (mesh, label) = synth_mesh(cfg, k)?;
            let g = build_element_graph(&mesh)?.with_label(label);
            Ok((g, label))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledGraphDataset {
        items,
        provenance: Provenance::Synthetic(*cfg),
        skipped: Vec::new(),
    })
}
