use std::rc::Rc;

use crate::tensor::{Tape, Tensor, Var};

use super::{Activation, ConvKind, NnError, Result};

/// Negative slope of the LeakyReLU inside attention scoring.
pub const ATTENTION_SLOPE: f64 = 0.2;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Neighbourhood structure of a (possibly batched) graph, with self-loops
/// and symmetric normalisation weights precomputed.
#[derive(Debug, Clone)]
pub struct Topology {
    n: usize,
    edges: Vec<(usize, usize)>,
    looped: Rc<[(usize, usize)]>,
    heads: Vec<usize>,
    tails: Vec<usize>,
    norm: Vec<f64>,
}

impl Topology {
    /// `edges` holds both directions of every undirected edge and no self-loops.
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if let Some(&(a, b)) = edges.iter().find(|&&(a, b)| a >= n || b >= n || a == b) {
            return Err(NnError::ShapeMismatch(format!(
                "edge ({a}, {b}) invalid for {n} nodes"
            )));
        }
        let mut looped: Vec<(usize, usize)> = edges
            .iter()
            .copied()
            .chain((0..n).map(|i| (i, i)))
            .collect();
        looped.sort_unstable();
        looped.dedup();
        let mut deg = vec![0usize; n];
        looped.iter().for_each(|&(i, _)| deg[i] += 1);
        let norm = looped
            .iter()
            .map(|&(i, j)| 1.0 / ((deg[i] * deg[j]) as f64).sqrt())
            .collect();
        Ok(Self {
            n,
            heads: looped.iter().map(|p| p.0).collect(),
            tails: looped.iter().map(|p| p.1).collect(),
            looped: looped.into(),
            edges,
            norm,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Directed edges without self-loops.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Directed edges plus one self-loop per node, sorted by `(target, source)`.
    pub fn looped(&self) -> &Rc<[(usize, usize)]> {
        &self.looped
    }

    /// `1 / sqrt(d_i d_j)` per looped pair, degrees counting the self-loop.
    pub fn sym_norm(&self) -> &[f64] {
        &self.norm
    }
}

/// Tape handles of one convolution level.
///
/// `w` is stored transposed relative to the usual `d' x 2m` layout, as
/// `2m x d'`: rows `0..m` act on the receiving node, rows `m..2m` on the
/// neighbour. `att` has `d'` entries for GATv2 and `2d'` for static GAT.
#[derive(Debug, Clone, Copy)]
pub struct ConvParams {
    pub w: Var,
    pub att: Option<Var>,
    pub w_res: Option<Var>,
    pub norm_gain: Var,
    pub norm_bias: Var,
}

fn halves(h_i: &[f64], h_j: &[f64], w: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (rows, dp) = w.dims()?;
    let d = h_i.len();
    if h_j.len() != d || rows != 2 * d {
        return Err(NnError::ShapeMismatch(format!(
            "score: h_i {d}, h_j {}, w {rows}x{dp}",
            h_j.len()
        )));
    }
    let project = |h: &[f64], off: usize| {
        (0..dp)
            .map(|c| {
                h.iter()
                    .enumerate()
                    .map(|(k, v)| v * w.get(off + k, c))
                    .sum()
            })
            .collect::<Vec<f64>>()
    };
    Ok((project(h_i, 0), project(h_j, d)))
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        ATTENTION_SLOPE * x
    }
}

/// Static attention score `LeakyReLU(a_l · W_l h_i + a_r · W_r h_j)`.
pub fn gat_score_static(h_i: &[f64], h_j: &[f64], w: &Tensor, att: &[f64]) -> Result<f64> {
    let (l, r) = halves(h_i, h_j, w)?;
    if att.len() != 2 * l.len() {
        return Err(NnError::ShapeMismatch(format!(
            "static att needs {} entries",
            2 * l.len()
        )));
    }
    let dot: f64 = l.iter().chain(&r).zip(att).map(|(a, b)| a * b).sum();
    Ok(leaky(dot))
}

/// Dynamic attention score `att · LeakyReLU(W_l h_i + W_r h_j)`.
pub fn gatv2_score(h_i: &[f64], h_j: &[f64], w: &Tensor, att: &[f64]) -> Result<f64> {
    let (l, r) = halves(h_i, h_j, w)?;
    if att.len() != l.len() {
        return Err(NnError::ShapeMismatch(format!(
            "att needs {} entries",
            l.len()
        )));
    }
    Ok(l.iter()
        .zip(&r)
        .zip(att)
        .map(|((a, b), c)| c * leaky(a + b))
        .sum())
}

/// One convolution level: `Conv(act(LayerNorm(x))) + skip(x)`.
///
/// Every node attends over its neighbours and itself; messages are the
/// neighbour-side projection `W_r h_j`.
pub fn conv_layer(
    tape: &Tape,
    x: Var,
    topo: &Topology,
    p: &ConvParams,
    kind: ConvKind,
    act: Activation,
) -> Result<Var> {
    let (n, m) = tape.value(x).dims()?;
    let (wr, dp) = tape.value(p.w).dims()?;
    if n != topo.n() || wr != 2 * m {
        return Err(NnError::ShapeMismatch(format!(
            "conv: x {n}x{m}, w {wr}x{dp}, topology of {} nodes",
            topo.n()
        )));
    }
    let normed = tape.layer_norm(x, p.norm_gain, p.norm_bias, LAYER_NORM_EPS)?;
    let h = act.apply(tape, normed);
    let w_l = tape.slice_rows(p.w, 0, m)?;
    let w_r = tape.slice_rows(p.w, m, 2 * m)?;
    let values = tape.matmul(h, w_r)?;

    let att_param = |expected: usize| -> Result<Var> {
        let a = p.att.ok_or_else(|| NnError::MissingParam("att".into()))?;
        if tape.value(a).dims()? != (expected, 1) {
            return Err(NnError::ShapeMismatch(format!("att must be {expected}x1")));
        }
        Ok(a)
    };
    let alpha = match kind {
        ConvKind::Gatv2 => {
            let att = att_param(dp)?;
            let left = tape.matmul(h, w_l)?;
            let li = tape.gather_rows(left, &topo.heads)?;
            let rj = tape.gather_rows(values, &topo.tails)?;
            let act = tape.leaky_relu(tape.add(li, rj)?, ATTENTION_SLOPE);
            let scores = tape.matmul(act, att)?;
            tape.softmax_segmented(scores, &topo.heads, n)?
        }
        ConvKind::Gat => {
            let att = att_param(2 * dp)?;
            let left = tape.matmul(h, w_l)?;
            let sl = tape.matmul(left, tape.slice_rows(att, 0, dp)?)?;
            let sr = tape.matmul(values, tape.slice_rows(att, dp, 2 * dp)?)?;
            let e = tape.add(
                tape.gather_rows(sl, &topo.heads)?,
                tape.gather_rows(sr, &topo.tails)?,
            )?;
            let scores = tape.leaky_relu(e, ATTENTION_SLOPE);
            tape.softmax_segmented(scores, &topo.heads, n)?
        }
        ConvKind::Gcn => tape.constant(Tensor::col_vector(topo.sym_norm().to_vec())),
    };
    let out = tape.spmm(Rc::clone(topo.looped()), alpha, values)?;

    let skip = match p.w_res {
        None if m == dp => x,
        None => return Err(NnError::MissingParam("w_res".into())),
        Some(w_res) => tape.matmul(x, w_res)?,
    };
    Ok(tape.add(out, skip)?)
}
