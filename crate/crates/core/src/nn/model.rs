use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::tensor::{Tape, Tensor, Var};

use super::batch::Batch;
use super::conv::{conv_layer, ConvParams};
use super::pool::{pool_apply, readout, sagpool_scores, top_rank_segmented};
use super::{ConvKind, ModelConfig, NnError, Result};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Named tensors keyed by layer path, e.g. `level0.conv.w`.
pub type ParamStore = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

/// Batch statistics seen by one batch-norm layer during a training forward.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub prefix: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `graphs x classes` log-probabilities.
    pub log_probs: Var,
    pub bn_stats: Vec<BnStats>,
    /// Node count of every level after pooling.
    pub pooled_sizes: Vec<usize>,
}

enum Init {
    Glorot,
    Zeros,
    Ones,
}

fn param_layout(cfg: &ModelConfig) -> Vec<(String, usize, usize, Init)> {
    let mut out = Vec::new();
    let h = cfg.hidden;
    for l in 0..cfg.num_levels {
        let m = if l == 0 { cfg.in_features } else { h };
        let p = format!("level{l}");
        out.push((format!("{p}.norm.gain"), 1, m, Init::Ones));
        out.push((format!("{p}.norm.bias"), 1, m, Init::Zeros));
        out.push((format!("{p}.conv.w"), 2 * m, h, Init::Glorot));
        match cfg.conv_kind {
            ConvKind::Gatv2 => out.push((format!("{p}.conv.att"), h, 1, Init::Glorot)),
            ConvKind::Gat => out.push((format!("{p}.conv.att"), 2 * h, 1, Init::Glorot)),
            ConvKind::Gcn => {}
        }
        if m != h {
            out.push((format!("{p}.conv.w_res"), m, h, Init::Glorot));
        }
        out.push((format!("{p}.pool.w_att"), h, 1, Init::Glorot));
    }
    let widths = cfg.mlp_widths();
    for k in 0..3 {
        out.push((format!("mlp.{k}.w"), widths[k], widths[k + 1], Init::Glorot));
        out.push((format!("mlp.{k}.b"), 1, widths[k + 1], Init::Zeros));
        if k < 2 {
            out.push((format!("mlp.bn{k}.gain"), 1, widths[k + 1], Init::Ones));
            out.push((format!("mlp.bn{k}.bias"), 1, widths[k + 1], Init::Zeros));
        }
    }
    out
}

/// Configuration, trainable parameters and batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub buffers: ParamStore,
}

impl Model {
    /// Glorot-uniform weights, zero biases, unit norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, r, c, init) in param_layout(&config) {
            let t = match init {
                Init::Zeros => Tensor::zeros(r, c),
                Init::Ones => Tensor::full(r, c, 1.0),
                Init::Glorot => {
                    let limit = (6.0 / (r + c) as f64).sqrt();
                    let data = (0..r * c)
                        .map(|_| rng.random_range(-limit..limit))
                        .collect();
                    Tensor::matrix(r, c, data)?
                }
            };
            params.insert(name, t);
        }
        let mut buffers = ParamStore::new();
        for k in 0..2 {
            let w = config.mlp_widths()[k + 1];
            buffers.insert(format!("mlp.bn{k}.running_mean"), Tensor::zeros(1, w));
            buffers.insert(format!("mlp.bn{k}.running_var"), Tensor::full(1, w, 1.0));
        }
        Ok(Self {
            config,
            params,
            buffers,
        })
    }

    /// Checks that `params` and `buffers` hold exactly the expected shapes.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let layout = param_layout(&self.config);
        if layout.len() != self.params.len() {
            return Err(NnError::ShapeMismatch(format!(
                "expected {} parameters, found {}",
                layout.len(),
                self.params.len()
            )));
        }
        for (name, r, c, _) in layout {
            let t = self
                .params
                .get(&name)
                .ok_or_else(|| NnError::MissingParam(name.clone()))?;
            if t.dims()? != (r, c) || !t.is_finite() {
                return Err(NnError::ShapeMismatch(format!(
                    "{name} must be a finite {r}x{c} matrix"
                )));
            }
        }
        for k in 0..2 {
            let w = self.config.mlp_widths()[k + 1];
            for s in ["running_mean", "running_var"] {
                let name = format!("mlp.bn{k}.{s}");
                let t = self
                    .buffers
                    .get(&name)
                    .ok_or_else(|| NnError::MissingParam(name.clone()))?;
                if t.dims()? != (1, w) {
                    return Err(NnError::ShapeMismatch(format!("{name} must be 1x{w}")));
                }
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Records every parameter on `tape`, trainable or constant.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> BTreeMap<String, Var> {
        self.params
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), trainable)))
            .collect()
    }

    /// Eval-mode log-probabilities, one row per graph of `batch`.
    pub fn predict(&self, batch: &Batch) -> Result<Tensor> {
        let tape = Tape::new();
        let vars = self.bind(&tape, false);
        let out = forward(&tape, &self.config, &vars, &self.buffers, batch, Mode::Eval)?;
        Ok((*tape.value(out.log_probs)).clone())
    }

    /// Folds batch statistics into the running estimates. The running
    /// variance uses the unbiased batch variance when the batch has more
    /// than one row.
    pub fn update_running_stats(&mut self, stats: &[BnStats]) {
        for s in stats {
            let unbias = if s.count > 1 {
                s.count as f64 / (s.count - 1) as f64
            } else {
                1.0
            };
            let blend = |buf: &mut Tensor, new: &[f64], scale: f64| {
                for (r, v) in buf.data_mut().iter_mut().zip(new) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * scale;
                }
            };
            if let Some(m) = self.buffers.get_mut(&format!("{}.running_mean", s.prefix)) {
                blend(m, &s.mean, 1.0);
            }
            if let Some(v) = self.buffers.get_mut(&format!("{}.running_var", s.prefix)) {
                blend(v, &s.var, unbias);
            }
        }
    }
}

fn get(vars: &BTreeMap<String, Var>, name: &str) -> Result<Var> {
    vars.get(name)
        .copied()
        .ok_or_else(|| NnError::MissingParam(name.to_string()))
}

fn batch_norm(
    tape: &Tape,
    x: Var,
    prefix: &str,
    vars: &BTreeMap<String, Var>,
    buffers: &ParamStore,
    mode: Mode,
    stats: &mut Vec<BnStats>,
) -> Result<Var> {
    let gain = get(vars, &format!("{prefix}.gain"))?;
    let bias = get(vars, &format!("{prefix}.bias"))?;
    match mode {
        Mode::Train => {
            let count = tape.value(x).rows();
            let (y, mean, var) = tape.batch_norm_train(x, gain, bias, BN_EPS)?;
            stats.push(BnStats {
                prefix: prefix.to_string(),
                mean,
                var,
                count,
            });
            Ok(y)
        }
        Mode::Eval => {
            let buf = |s: &str| {
                let name = format!("{prefix}.{s}");
                buffers.get(&name).ok_or(NnError::MissingParam(name))
            };
            let (mean, var) = (buf("running_mean")?, buf("running_var")?);
            let shift = tape.constant(mean.map(|v| -v));
            let inv = tape.constant(var.map(|v| 1.0 / (v + BN_EPS).sqrt()));
            let y = tape.mul_row(tape.add_row(x, shift)?, inv)?;
            Ok(tape.add_row(tape.mul_row(y, gain)?, bias)?)
        }
    }
}

/// Full network on a batch of graphs.
pub fn forward(
    tape: &Tape,
    cfg: &ModelConfig,
    vars: &BTreeMap<String, Var>,
    buffers: &ParamStore,
    batch: &Batch,
    mode: Mode,
) -> Result<ForwardOutput> {
    let (n, f) = batch.x.dims()?;
    if f != cfg.in_features {
        return Err(NnError::ShapeMismatch(format!(
            "model expects {} features, batch has {f}",
            cfg.in_features
        )));
    }
    if n == 0 || batch.num_graphs == 0 {
        return Err(NnError::EmptyGraph);
    }
    let mut x = tape.constant(batch.x.clone());
    let mut topo = batch.topo.clone();
    let mut ids = batch.graph_ids.clone();
    let mut readouts = Vec::with_capacity(cfg.num_levels);
    let mut pooled_sizes = Vec::with_capacity(cfg.num_levels);
    for l in 0..cfg.num_levels {
        let p = format!("level{l}");
        let params = ConvParams {
            w: get(vars, &format!("{p}.conv.w"))?,
            att: vars.get(&format!("{p}.conv.att")).copied(),
            w_res: vars.get(&format!("{p}.conv.w_res")).copied(),
            norm_gain: get(vars, &format!("{p}.norm.gain"))?,
            norm_bias: get(vars, &format!("{p}.norm.bias"))?,
        };
        let h = conv_layer(tape, x, &topo, &params, cfg.conv_kind, cfg.activation)?;
        let z = sagpool_scores(tape, h, &topo, get(vars, &format!("{p}.pool.w_att"))?)?;
        let idx = top_rank_segmented(tape.value(z).data(), &ids, cfg.pooling_ratio);
        let pooled = pool_apply(tape, h, &topo, z, &idx)?;
        ids = idx.iter().map(|&i| ids[i]).collect();
        readouts.push(readout(tape, pooled.x, &ids, batch.num_graphs)?);
        pooled_sizes.push(idx.len());
        x = pooled.x;
        topo = pooled.topo;
    }
    let mut z = tape.concat_cols(&readouts)?;
    let mut bn_stats = Vec::new();
    for k in 0..3 {
        let w = get(vars, &format!("mlp.{k}.w"))?;
        let b = get(vars, &format!("mlp.{k}.b"))?;
        z = tape.add_row(tape.matmul(z, w)?, b)?;
        if k < 2 {
            z = batch_norm(
                tape,
                z,
                &format!("mlp.bn{k}"),
                vars,
                buffers,
                mode,
                &mut bn_stats,
            )?;
            z = cfg.activation.apply(tape, z);
        }
    }
    Ok(ForwardOutput {
        log_probs: tape.log_softmax_rows(z)?,
        bn_stats,
        pooled_sizes,
    })
}
