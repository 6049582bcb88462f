//! JSON and compact binary encodings of [`SparseGraph`].

use serde::{Deserialize, Serialize};

use super::{GraphError, GraphMode, Result, SparseGraph};

const MAGIC: &[u8; 4] = b"MQEG";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    mode: GraphMode,
    n: usize,
    f: usize,
    features: Vec<f64>,
    edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    #[serde(default)]
    name: String,
}

pub fn write_graph_json(g: &SparseGraph) -> String {
    let doc = GraphDoc {
        mode: g.mode,
        n: g.n(),
        f: g.f(),
        features: g.features().to_vec(),
        edges: g.edges().iter().map(|&(a, b)| [a, b]).collect(),
        label: g.label,
        name: g.name.clone(),
    };
    serde_json::to_string(&doc).expect("graph documents always serialize")
}

pub fn read_graph_json(text: &str) -> Result<SparseGraph> {
    let doc: GraphDoc =
        serde_json::from_str(text).map_err(|e| GraphError::Format(e.to_string()))?;
    let edges = doc.edges.into_iter().map(|[a, b]| (a, b)).collect();
    let mut g = SparseGraph::new(doc.mode, doc.n, doc.f, doc.features, edges)?;
    g.name = doc.name;
    g.label = doc.label;
    Ok(g)
}

/// Little-endian layout: `"MQEG"`, u32 n, u32 f, u8 mode, n*f f64 features,
/// u32 directed edge count, then that many `(u32, u32)` pairs.
pub fn write_graph_binary(g: &SparseGraph) -> Vec<u8> {
    let mut out = Vec::with_capacity(17 + 8 * g.features().len() + 8 * g.edges().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(g.n() as u32).to_le_bytes());
    out.extend_from_slice(&(g.f() as u32).to_le_bytes());
    out.push(g.mode.code());
    for v in g.features() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(g.edges().len() as u32).to_le_bytes());
    for &(a, b) in g.edges() {
        out.extend_from_slice(&(a as u32).to_le_bytes());
        out.extend_from_slice(&(b as u32).to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self.buf.get(self.pos..end).ok_or_else(|| {
            GraphError::Format(format!("unexpected end of data at byte {}", self.pos))
        })?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice length checked"))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take()?) as usize)
    }
}

pub fn read_graph_binary(bytes: &[u8]) -> Result<SparseGraph> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if &r.take::<4>()? != MAGIC {
        return Err(GraphError::Format("bad magic, expected MQEG".into()));
    }
    let n = r.u32()?;
    let f = r.u32()?;
    let [code] = r.take::<1>()?;
    let mode = GraphMode::from_code(code)
        .ok_or_else(|| GraphError::Format(format!("unknown mode byte {code}")))?;
    let features = (0..n * f)
        .map(|_| r.take::<8>().map(f64::from_le_bytes))
        .collect::<Result<Vec<_>>>()?;
    let count = r.u32()?;
    let edges = (0..count)
        .map(|_| Ok((r.u32()?, r.u32()?)))
        .collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(GraphError::Format(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    SparseGraph::new(mode, n, f, features, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> SparseGraph {
        SparseGraph::from_undirected(
            GraphMode::Element,
            3,
            2,
            vec![0.5, -1.25, 3.0, 1e-300, 7.0, 0.1],
            [(0, 1), (1, 2)],
        )
        .unwrap()
        .with_name("g")
        .with_label(4)
    }

    #[test]
    fn json_layout() {
        let text = write_graph_json(&sample());
        assert!(text.starts_with(r#"{"mode":"element","n":3,"f":2,"#));
        assert!(text.contains(r#""edges":[[0,1],[1,0],[1,2],[2,1]]"#));
        assert_eq!(read_graph_json(&text).unwrap(), sample());
    }

    #[test]
    fn binary_rejects_bad_magic_and_truncation() {
        let mut bytes = write_graph_binary(&sample());
        assert!(read_graph_binary(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(matches!(
            read_graph_binary(&bytes),
            Err(GraphError::Format(_))
        ));
    }

    #[test]
    fn json_rejects_asymmetric() {
        let text = r#"{"mode":"point","n":2,"f":0,"features":[],"edges":[[0,1]],"name":""}"#;
        assert!(matches!(
            read_graph_json(text),
            Err(GraphError::InvalidGraph(_))
        ));
    }

    proptest! {
        #[test]
        fn binary_round_trip(
            feats in proptest::collection::vec(-1e9f64..1e9, 18),
            pairs in proptest::collection::vec((0usize..6, 0usize..6), 0..12),
        ) {
            let pairs: Vec<_> = pairs.into_iter().filter(|(a, b)| a != b).collect();
            let g = SparseGraph::from_undirected(GraphMode::Point, 6, 3, feats, pairs).unwrap();
            let back = read_graph_binary(&write_graph_binary(&g)).unwrap();
            prop_assert_eq!(&back, &g);
            prop_assert_eq!(read_graph_json(&write_graph_json(&g)).unwrap(), g);
        }
    }
}
