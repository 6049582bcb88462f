use std::rc::Rc;

use crate::tensor::{Tape, Tensor, TensorError, Var};

use super::conv::Topology;
use super::{NnError, Result};

/// `⌈k n⌉`, clamped to `1..=n`. Products within 1e-9 of an integer count as
/// that integer, so a ratio computed as `0.1 * 3` keeps 3 of 10 rather than 4.
pub fn keep_count(n: usize, k: f64) -> usize {
    let v = k * n as f64;
    let r = v.round();
    let c = if (v - r).abs() < 1e-9 { r } else { v.ceil() };
    (c as usize).clamp(1.min(n), n)
}

/// Node importance `tanh(D^-1/2 (A + I) D^-1/2 x w_att)`, one row per node.
pub fn sagpool_scores(tape: &Tape, x: Var, topo: &Topology, w_att: Var) -> Result<Var> {
    let (n, f) = tape.value(x).dims()?;
    if n != topo.n() || tape.value(w_att).dims()? != (f, 1) {
        return Err(NnError::ShapeMismatch(format!(
            "sagpool: x {n}x{f}, w_att must be {f}x1"
        )));
    }
    let proj = tape.matmul(x, w_att)?;
    let norm = tape.constant(Tensor::col_vector(topo.sym_norm().to_vec()));
    let agg = tape.spmm(Rc::clone(topo.looped()), norm, proj)?;
    Ok(tape.tanh(agg))
}

/// Indices of the `⌈k n⌉` largest scores, ties to the smaller index,
/// returned in ascending order.
pub fn top_rank(z: &[f64], k: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..z.len()).collect();
    order.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    order.truncate(keep_count(z.len(), k));
    order.sort_unstable();
    order
}

/// Per-graph [`top_rank`] over a batch whose `graph_ids` are sorted.
pub(crate) fn top_rank_segmented(z: &[f64], graph_ids: &[usize], k: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < z.len() {
        let g = graph_ids[start];
        let end = start + graph_ids[start..].iter().take_while(|&&h| h == g).count();
        out.extend(top_rank(&z[start..end], k).into_iter().map(|i| i + start));
        start = end;
    }
    out
}

#[derive(Debug, Clone)]
pub struct Pooled {
    pub x: Var,
    pub topo: Topology,
    /// Surviving node indices in the input numbering.
    pub kept: Vec<usize>,
}

/// Keeps rows `idx` gated by their scores and the induced subgraph,
/// relabelled to `0..idx.len()`.
pub fn pool_apply(tape: &Tape, x: Var, topo: &Topology, z: Var, idx: &[usize]) -> Result<Pooled> {
    let mut relabel = vec![usize::MAX; topo.n()];
    for (new, &old) in idx.iter().enumerate() {
        if old >= topo.n() {
            return Err(TensorError::IndexOutOfRange {
                index: old,
                len: topo.n(),
            }
            .into());
        }
        relabel[old] = new;
    }
    let edges = topo
        .edges()
        .iter()
        .filter_map(|&(a, b)| {
            let (ra, rb) = (relabel[a], relabel[b]);
            (ra != usize::MAX && rb != usize::MAX).then_some((ra, rb))
        })
        .collect();
    let rows = tape.gather_rows(x, idx)?;
    let gates = tape.gather_rows(z, idx)?;
    Ok(Pooled {
        x: tape.row_scale(rows, gates)?,
        topo: Topology::new(idx.len(), edges)?,
        kept: idx.to_vec(),
    })
}

/// `[column mean ‖ column max]` of every graph segment, one row per graph.
pub fn readout(tape: &Tape, x: Var, graph_ids: &[usize], num_graphs: usize) -> Result<Var> {
    if tape.value(x).rows() == 0 || num_graphs == 0 {
        return Err(NnError::EmptyGraph);
    }
    let empty = |e: TensorError| match e {
        TensorError::EmptySegment(_) => NnError::EmptyGraph,
        e => e.into(),
    };
    let mean = tape
        .segment_mean_rows(x, graph_ids, num_graphs)
        .map_err(empty)?;
    let max = tape
        .segment_max_rows(x, graph_ids, num_graphs)
        .map_err(empty)?;
    Ok(tape.concat_cols(&[mean, max])?)
}
