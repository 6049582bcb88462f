use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::dataset::LabeledGraphDataset;
use crate::nn::{batch_graphs, forward, Activation, Mode, Model, ModelConfig};
use crate::tensor::{Tape, Tensor};

use super::eval::evaluate;
use super::optim::{clip_gradients, AmsGrad, ReduceOnPlateau};
use super::{Result, Split, TrainConfig, TrainError};

/// Pooling ratios of the ablation grid.
pub const ABLATION_RATIOS: [f64; 3] = [0.2, 0.3, 0.4];

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr,seconds\n");
        for e in &self.log {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:e},{:.3}\n",
                e.epoch, e.train_loss, e.val_loss, e.lr, e.seconds
            ));
        }
        out
    }
}

fn mean_val_loss(
    model: &Model,
    ds: &LabeledGraphDataset,
    idx: &[usize],
    batch_size: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size) {
        let graphs: Vec<_> = chunk.iter().map(|&i| &ds.items[i].0).collect();
        let lp = model.predict(&batch_graphs(&graphs)?)?;
        for (r, &i) in chunk.iter().enumerate() {
            total -= lp.get(r, ds.items[i].1);
        }
    }
    Ok(total / idx.len() as f64)
}

/// One optimizer step on a mini-batch; returns the batch loss.
fn train_step(
    model: &mut Model,
    opt: &mut AmsGrad,
    ds: &LabeledGraphDataset,
    chunk: &[usize],
    lr: f64,
    cfg: &TrainConfig,
) -> Result<f64> {
    let graphs: Vec<_> = chunk.iter().map(|&i| &ds.items[i].0).collect();
    let targets: Vec<usize> = chunk.iter().map(|&i| ds.items[i].1).collect();
    let batch = batch_graphs(&graphs)?;
    let tape = Tape::new();
    let vars = model.bind(&tape, true);
    let out = forward(
        &tape,
        &model.config,
        &vars,
        &model.buffers,
        &batch,
        Mode::Train,
    )?;
    let loss = tape.nll_mean(out.log_probs, &targets)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Ok(value);
    }
    tape.backward(loss)?;
    let mut grads: BTreeMap<String, Tensor> = vars
        .iter()
        .map(|(name, &v)| {
            let g = tape.grad(v).unwrap_or_else(|| {
                let p = &model.params[name];
                Tensor::zeros(p.rows(), p.cols())
            });
            (name.clone(), g)
        })
        .collect();
    clip_gradients(grads.values_mut(), cfg.clip_norm);
    opt.step(&mut model.params, &grads, lr, cfg.weight_decay)?;
    model.update_running_stats(&out.bn_stats);
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Stalled,
    Stop,
}

/// Stops once `patience` epochs pass without a strictly lower loss.
#[derive(Debug, Clone)]
pub struct EarlyStop {
    patience: usize,
    best: f64,
    best_epoch: usize,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, loss: f64) -> Progress {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            Progress::Improved
        } else if epoch - self.best_epoch >= self.patience {
            Progress::Stop
        } else {
            Progress::Stalled
        }
    }
}

/// Mini-batch training with plateau learning-rate decay and early stopping
/// on validation loss. Returns the best-validation parameters.
pub fn train(
    ds: &LabeledGraphDataset,
    split: &Split,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let mut model = Model::init(model_cfg.clone(), cfg.seed)?;
    let mut opt = AmsGrad::new();
    let mut sched =
        ReduceOnPlateau::new(cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order = split.train.clone();
    let mut log = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.clone());
    let mut stopper = EarlyStop::new(cfg.early_stop_patience);

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let lr = sched.lr;
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let loss = train_step(&mut model, &mut opt, ds, chunk, lr, cfg)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, value: loss });
            }
            total += loss * chunk.len() as f64;
        }
        let train_loss = total / order.len() as f64;
        let val_loss = mean_val_loss(&model, ds, &split.val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch,
                value: val_loss,
            });
        }
        sched.step(val_loss);
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        });
        match stopper.update(epoch, val_loss) {
            Progress::Improved => best = (val_loss, epoch, model.clone()),
            Progress::Stalled => {}
            Progress::Stop => break,
        }
    }
    let (best_val_loss, best_epoch, model) = best;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_val_loss,
    })
}

/// Test accuracy for every activation and pooling ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationGrid {
    pub activations: Vec<Activation>,
    pub ratios: Vec<f64>,
    /// `cells[a][r]`: test accuracy, or the error that stopped the run.
    pub cells: Vec<Vec<std::result::Result<f64, String>>>,
}

impl AblationGrid {
    /// One row per activation, one column per pooling ratio.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("activation");
        for r in &self.ratios {
            out.push_str(&format!(",{r}"));
        }
        out.push('\n');
        for (a, row) in self.activations.iter().zip(&self.cells) {
            out.push_str(a.name());
            for cell in row {
                match cell {
                    Ok(acc) => out.push_str(&format!(",{:.2}", 100.0 * acc)),
                    Err(_) => out.push_str(",error"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn all_ok(&self) -> bool {
        self.cells
            .iter()
            .flatten()
            .all(|c| c.as_ref().is_ok_and(|v| v.is_finite()))
    }
}

pub fn run_ablation(
    ds: &LabeledGraphDataset,
    split: &Split,
    base: &ModelConfig,
    cfg: &TrainConfig,
) -> AblationGrid {
    let activations = Activation::ALL.to_vec();
    let ratios = ABLATION_RATIOS.to_vec();
    let cells = activations
        .iter()
        .map(|&activation| {
            ratios
                .iter()
                .map(|&pooling_ratio| {
                    let mc = ModelConfig {
                        activation,
                        pooling_ratio,
                        ..base.clone()
                    };
                    let outcome = train(ds, split, &mc, cfg).map_err(|e| e.to_string())?;
                    let report =
                        evaluate(&outcome.model, ds, &split.test).map_err(|e| e.to_string())?;
                    Ok(report.accuracy)
                })
                .collect()
        })
        .collect();
    AblationGrid {
        activations,
        ratios,
        cells,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Provenance;
    use crate::graph::{GraphMode, SparseGraph};
    use crate::train::split_dataset;

    /// Two classes separated by the sign of the first feature.
    fn toy(n: usize) -> LabeledGraphDataset {
        let items = (0..n)
            .map(|k| {
                let label = k % 2;
                let sign = if label == 0 { -1.0 } else { 1.0 };
                let nodes = 3 + k % 3;
                let feats = (0..nodes * 6)
                    .map(|p| {
                        if p % 6 == 0 {
                            sign * (1.0 + 0.1 * (k % 5) as f64)
                        } else {
                            0.05 * ((p + k) % 7) as f64
                        }
                    })
                    .collect();
                let edges: Vec<_> = (1..nodes).map(|i| (i - 1, i)).collect();
                let g = SparseGraph::from_undirected(GraphMode::Element, nodes, 6, feats, edges)
                    .unwrap();
                (g.with_label(label), label)
            })
            .collect();
        LabeledGraphDataset {
            items,
            provenance: Provenance::Directory { path: "toy".into() },
            skipped: vec![],
        }
    }

    #[test]
    fn separable_toy_reaches_full_validation_accuracy() {
        let ds = toy(20);
        let split = split_dataset(&ds.labels(), 0).unwrap();
        let cfg = TrainConfig {
            max_epochs: 50,
            early_stop_patience: 50,
            ..Default::default()
        };
        let out = train(&ds, &split, &ModelConfig::default(), &cfg).unwrap();
        let report = evaluate(&out.model, &ds, &split.val).unwrap();
        assert_eq!(report.accuracy, 1.0, "{:?}", out.log.last());
        assert!(out
            .log_csv()
            .starts_with("epoch,train_loss,val_loss,lr,seconds\n1,"));
    }

    #[test]
    fn early_stop_on_worsening_loss() {
        let mut stop = EarlyStop::new(20);
        assert_eq!(stop.update(1, 1.0), Progress::Improved);
        for e in 2..=20 {
            assert_eq!(stop.update(e, 1.0 + e as f64), Progress::Stalled);
        }
        assert_eq!(stop.update(21, 30.0), Progress::Stop);
    }

    #[test]
    fn training_stops_within_patience_of_best() {
        let ds = toy(10);
        let split = split_dataset(&ds.labels(), 0).unwrap();
        let cfg = TrainConfig {
            max_epochs: 60,
            early_stop_patience: 3,
            ..Default::default()
        };
        let out = train(&ds, &split, &ModelConfig::default(), &cfg).unwrap();
        assert!(out.log.len() == 60 || out.log.len() == out.best_epoch + 3);
        let best = out
            .log
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best, out.best_val_loss);
    }
}
