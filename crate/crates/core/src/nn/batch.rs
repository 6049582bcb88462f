use crate::graph::SparseGraph;
use crate::tensor::Tensor;

use super::conv::Topology;
use super::{NnError, Result};

/// Several graphs merged block-diagonally: features stacked, edge indices
/// offset, and `graph_ids[i]` naming the graph that owns node `i`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub topo: Topology,
    pub graph_ids: Vec<usize>,
    pub num_graphs: usize,
}

pub fn batch_graphs(graphs: &[&SparseGraph]) -> Result<Batch> {
    let f = graphs.first().map_or(0, |g| g.f());
    if let Some(g) = graphs.iter().find(|g| g.f() != f) {
        return Err(NnError::MixedFeatureWidth(f, g.f()));
    }
    if graphs.iter().any(|g| g.n() == 0) {
        return Err(NnError::EmptyGraph);
    }
    let total: usize = graphs.iter().map(|g| g.n()).sum();
    let mut data = Vec::with_capacity(total * f);
    let mut edges = Vec::with_capacity(graphs.iter().map(|g| g.edges().len()).sum());
    let mut graph_ids = Vec::with_capacity(total);
    let mut offset = 0;
    for (k, g) in graphs.iter().enumerate() {
        data.extend_from_slice(g.features());
        edges.extend(g.edges().iter().map(|&(a, b)| (a + offset, b + offset)));
        graph_ids.extend(std::iter::repeat_n(k, g.n()));
        offset += g.n();
    }
    Ok(Batch {
        x: Tensor::matrix(total, f, data)?,
        topo: Topology::new(total, edges)?,
        graph_ids,
        num_graphs: graphs.len(),
    })
}
