use serde::{Deserialize, Serialize};

use super::{MeshError, Point, Result, StructuredMesh};

/// Parses a single-block 2D Plot3D ASCII grid.
///
/// Layout: block count (must be 1), then `ni nj`, then `ni*nj` x-values
/// followed by `ni*nj` y-values, all whitespace separated, i-fastest.
/// Fortran `D` exponents are accepted.
pub fn parse_plot3d(text: &str) -> Result<StructuredMesh> {
    let mut tokens = text.split_ascii_whitespace();

    let blocks = tokens
        .next()
        .ok_or_else(|| MeshError::MalformedHeader("empty input".into()))?;
    match blocks.parse::<usize>() {
        Ok(1) => {}
        Ok(n) => {
            return Err(MeshError::MalformedHeader(format!(
                "block count {n}, only single-block grids are supported"
            )))
        }
        Err(_) => {
            return Err(MeshError::MalformedHeader(format!(
                "block count {blocks:?} is not an integer"
            )))
        }
    }

    let mut dim = |what: &str| -> Result<usize> {
        let tok = tokens
            .next()
            .ok_or_else(|| MeshError::MalformedHeader(format!("missing {what}")))?;
        tok.parse::<usize>()
            .map_err(|_| MeshError::MalformedHeader(format!("{what} {tok:?} is not an integer")))
    };
    let ni = dim("ni")?;
    let nj = dim("nj")?;
    if ni < 2 || nj < 2 {
        return Err(MeshError::InvalidDimensions { ni, nj });
    }

    let count = ni * nj;
    let mut values = Vec::with_capacity(2 * count);
    for tok in tokens {
        if values.len() == 2 * count {
            return Err(MeshError::SchemaError(format!(
                "trailing data after {} coordinates: {tok:?}",
                2 * count
            )));
        }
        values.push(parse_real(tok)?);
    }
    if values.len() < 2 * count {
        return Err(MeshError::TruncatedData {
            expected: 2 * count,
            found: values.len(),
        });
    }

    let coords = (0..count)
        .map(|k| Point::new(values[k], values[count + k]))
        .collect();
    StructuredMesh::new("", ni, nj, coords)
}

fn parse_real(tok: &str) -> Result<f64> {
    let parsed = if tok.contains(['D', 'd']) {
        tok.replace(['D', 'd'], "E").parse::<f64>()
    } else {
        tok.parse::<f64>()
    };
    parsed.map_err(|_| MeshError::SchemaError(format!("{tok:?} is not a number")))
}

/// Writes a single-block 2D Plot3D ASCII grid, one grid row per line.
pub fn write_plot3d(mesh: &StructuredMesh) -> String {
    let mut out = format!("1\n{} {}\n", mesh.ni(), mesh.nj());
    for axis in 0..2 {
        for row in mesh.coords().chunks(mesh.ni()) {
            let line: Vec<String> = row
                .iter()
                .map(|p| if axis == 0 { p.x } else { p.y }.to_string())
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeMesh {
    #[serde(default)]
    name: String,
    ni: usize,
    nj: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

/// Parses the native JSON mesh document `{name, ni, nj, x, y}`.
pub fn parse_native(text: &str) -> Result<StructuredMesh> {
    let doc: NativeMesh =
        serde_json::from_str(text).map_err(|e| MeshError::SchemaError(e.to_string()))?;
    if doc.ni < 2 || doc.nj < 2 {
        return Err(MeshError::InvalidDimensions {
            ni: doc.ni,
            nj: doc.nj,
        });
    }
    let expected = doc.ni * doc.nj;
    for (field, len) in [("x", doc.x.len()), ("y", doc.y.len())] {
        if len != expected {
            return Err(MeshError::LengthMismatch {
                field,
                expected,
                found: len,
            });
        }
    }
    let coords = doc
        .x
        .iter()
        .zip(&doc.y)
        .map(|(&x, &y)| Point::new(x, y))
        .collect();
    StructuredMesh::new(doc.name, doc.ni, doc.nj, coords)
}

pub fn write_native(mesh: &StructuredMesh) -> String {
    let doc = NativeMesh {
        name: mesh.name().to_string(),
        ni: mesh.ni(),
        nj: mesh.nj(),
        x: mesh.coords().iter().map(|p| p.x).collect(),
        y: mesh.coords().iter().map(|p| p.y).collect(),
    };
    serde_json::to_string(&doc).expect("mesh documents always serialize")
}
