//! Labelled mesh datasets: on-disk ingestion and synthetic generation.
//!
//! A dataset directory holds `manifest.json`, a flat map from relative file
//! path to label name. Files may be graphs (`.json` graph documents or
//! `.mqeg` binaries) or meshes (native `.json` or Plot3D), which are
//! converted to element graphs on load. Without a manifest, subdirectories
//! named after the labels are scanned instead.

mod synth;

pub use synth::{
    gen_base_grid, inject_defects, inject_with, make_synthetic, measure_defects, synth_mesh,
    DefectMeasures, Magnitudes, Profile, SynthConfig, DISTRIB_RANGE, DISTRIB_THRESHOLD,
    ORTHO_RANGE, ORTHO_THRESHOLD, SMOOTHNESS_JUMP, SMOOTH_RANGE, SMOOTH_THRESHOLD,
};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{self, build_element_graph, GraphError, GraphMode, SparseGraph};
use crate::mesh::{self, MeshError};

/// Class names in label order.
pub const LABEL_NAMES: [&str; 8] = ["W", "N-O", "N-S", "N-D", "N-OS", "N-OD", "N-SD", "N-OSD"];

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROVENANCE_FILE: &str = "provenance.json";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("no {MANIFEST_FILE} or label subdirectories in {0}")]
    MissingManifest(String),
    #[error("no parsable files in {0}")]
    NoParsableFiles(String),
    #[error("grid {ni}x{nj} too small: need at least 3x3 nodes")]
    DimensionTooSmall { ni: usize, nj: usize },
    #[error("defect injection failed: {0}")]
    DefectCollapse(String),
    #[error("defect magnitude {0} outside (0, 1]")]
    InvalidMagnitude(f64),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("{0}")]
    Format(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &Path, e: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn label_index(name: &str) -> Result<usize> {
    LABEL_NAMES
        .iter()
        .position(|&l| l == name)
        .ok_or_else(|| DatasetError::UnknownLabel(name.to_string()))
}

/// Which quality properties a mesh violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DefectFlags {
    pub ortho: bool,
    pub smooth: bool,
    pub distrib: bool,
}

impl DefectFlags {
    pub fn label(self) -> usize {
        match (self.ortho, self.smooth, self.distrib) {
            (false, false, false) => 0,
            (true, false, false) => 1,
            (false, true, false) => 2,
            (false, false, true) => 3,
            (true, true, false) => 4,
            (true, false, true) => 5,
            (false, true, true) => 6,
            (true, true, true) => 7,
        }
    }

    pub fn from_label(label: usize) -> Option<Self> {
        let name = LABEL_NAMES.get(label)?;
        let tail = name.strip_prefix("N-").unwrap_or("");
        Some(Self {
            ortho: tail.contains('O'),
            smooth: tail.contains('S'),
            distrib: tail.contains('D'),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum Provenance {
    Directory { path: String },
    Synthetic(SynthConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGraphDataset {
    pub items: Vec<(SparseGraph, usize)>,
    pub provenance: Provenance,
    /// Files that could not be read, with the reason.
    pub skipped: Vec<(String, String)>,
}

impl LabeledGraphDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|(_, l)| *l).collect()
    }

    pub fn label_counts(&self) -> [usize; 8] {
        let mut c = [0; 8];
        self.items.iter().for_each(|(_, l)| c[*l] += 1);
        c
    }
}

fn read_any(path: &Path) -> std::result::Result<SparseGraph, String> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    if ext == "mqeg" {
        let bytes = fs::read(path).map_err(|e| e.to_string())?;
        return graph::read_graph_binary(&bytes).map_err(|e| e.to_string());
    }
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mesh = if ext == "json" {
        match graph::read_graph_json(&text) {
            Ok(g) => return Ok(g),
            Err(ge) => mesh::parse_native(&text)
                .map_err(|me| format!("not a graph ({ge}) nor a mesh ({me})"))?,
        }
    } else {
        mesh::parse_plot3d(&text).map_err(|e| e.to_string())?
    };
    build_element_graph(&mesh).map_err(|e| e.to_string())
}

fn label_subdirectories(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for name in LABEL_NAMES {
        let sub = dir.join(name);
        if !sub.is_dir() {
            continue;
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&sub)
            .map_err(|e| io_err(&sub, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for f in files {
            let rel = format!(
                "{name}/{}",
                f.file_name().unwrap_or_default().to_string_lossy()
            );
            out.insert(rel, name.to_string());
        }
    }
    Ok(out)
}

pub fn read_manifest(dir: &Path) -> Result<BTreeMap<String, String>> {
    let path = dir.join(MANIFEST_FILE);
    if path.is_file() {
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        return serde_json::from_str(&text)
            .map_err(|e| DatasetError::Format(format!("{}: {e}", path.display())));
    }
    let found = label_subdirectories(dir)?;
    if found.is_empty() {
        return Err(DatasetError::MissingManifest(dir.display().to_string()));
    }
    Ok(found)
}

/// Loads every file listed for `dir`, converting meshes to element graphs.
/// Unreadable files are recorded in `skipped`; labels must be known names.
pub fn load_dataset(dir: &Path) -> Result<LabeledGraphDataset> {
    let manifest = read_manifest(dir)?;
    let mut items = Vec::new();
    let mut skipped = Vec::new();
    for (rel, label_name) in &manifest {
        let label = label_index(label_name)?;
        match read_any(&dir.join(rel)) {
            Ok(g) if g.mode == GraphMode::Element => items.push((g.with_label(label), label)),
            Ok(_) => skipped.push((
                rel.clone(),
                "point-mode graph; element graphs required".into(),
            )),
            Err(e) => skipped.push((rel.clone(), e)),
        }
    }
    if items.is_empty() {
        return Err(DatasetError::NoParsableFiles(dir.display().to_string()));
    }
    let provenance = match fs::read_to_string(dir.join(PROVENANCE_FILE)) {
        Ok(text) => serde_json::from_str(&text)
            .map_err(|e| DatasetError::Format(format!("{PROVENANCE_FILE}: {e}")))?,
        Err(_) => Provenance::Directory {
            path: dir.display().to_string(),
        },
    };
    Ok(LabeledGraphDataset {
        items,
        provenance,
        skipped,
    })
}

/// Writes one graph document per item under `items/`, plus the manifest and
/// provenance documents. Returns the paths written.
pub fn write_dataset(ds: &LabeledGraphDataset, dir: &Path) -> Result<Vec<PathBuf>> {
    let items_dir = dir.join("items");
    fs::create_dir_all(&items_dir).map_err(|e| io_err(&items_dir, e))?;
    let mut manifest = BTreeMap::new();
    let mut written = Vec::new();
    for (k, (g, label)) in ds.items.iter().enumerate() {
        let rel = format!("items/{k:05}.json");
        let path = dir.join(&rel);
        fs::write(&path, graph::write_graph_json(g)).map_err(|e| io_err(&path, e))?;
        manifest.insert(rel, LABEL_NAMES[*label].to_string());
        written.push(path);
    }
    for (name, text) in [
        (
            MANIFEST_FILE,
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        ),
        (
            PROVENANCE_FILE,
            serde_json::to_string_pretty(&ds.provenance).expect("provenance serializes"),
        ),
    ] {
        let path = dir.join(name);
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_round_trip_labels() {
        for l in 0..8 {
            assert_eq!(DefectFlags::from_label(l).unwrap().label(), l);
        }
        assert_eq!(
            DefectFlags::from_label(5).unwrap(),
            DefectFlags {
                ortho: true,
                smooth: false,
                distrib: true
            }
        );
        assert!(DefectFlags::from_label(8).is_none());
        assert!(label_index("N-X").is_err());
    }

    fn toy_mesh(k: usize) -> mesh::StructuredMesh {
        mesh::StructuredMesh::from_fn("toy", 3, 3, |i, j| {
            mesh::Point::new(i as f64 + 0.1 * k as f64, j as f64)
        })
        .unwrap()
    }

    #[test]
    fn manifest_with_toy_files_and_a_corrupt_one() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = BTreeMap::new();
        for (l, name) in LABEL_NAMES.iter().enumerate() {
            for k in 0..2 {
                let rel = format!("m{l}_{k}.x");
                fs::write(dir.path().join(&rel), mesh::write_plot3d(&toy_mesh(k))).unwrap();
                manifest.insert(rel, name.to_string());
            }
        }
        fs::write(
            dir.path().join(MANIFEST_FILE),
            serde_json::to_string(&manifest).unwrap(),
        )
        .unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.len(), 16);
        assert_eq!(ds.label_counts(), [2; 8]);

        fs::write(dir.path().join("m3_1.x"), "1\n3 3\n0 0").unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.len(), 15);
        assert_eq!(ds.skipped.len(), 1);
        assert_eq!(ds.skipped[0].0, "m3_1.x");
    }

    #[test]
    fn label_subdirectories_without_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(DatasetError::MissingManifest(_))
        ));
        fs::create_dir(dir.path().join("N-S")).unwrap();
        fs::write(
            dir.path().join("N-S/a.json"),
            mesh::write_native(&toy_mesh(0)),
        )
        .unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.labels(), vec![2]);
        assert_eq!(ds.items[0].0.n(), 4);
    }

    #[test]
    fn write_then_load_round_trips() {
        let ds = make_synthetic(&SynthConfig::new(1, 9, 9, 2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
    }
}
