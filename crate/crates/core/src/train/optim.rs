use std::collections::BTreeMap;

use crate::nn::ParamStore;
use crate::tensor::Tensor;

use super::{Result, TrainError};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Scales every gradient by `clip_norm / ‖g‖` when the global norm exceeds
/// `clip_norm`. Returns the norm before clipping.
pub fn clip_gradients<'a>(grads: impl IntoIterator<Item = &'a mut Tensor>, clip_norm: f64) -> f64 {
    let mut grads: Vec<&mut Tensor> = grads.into_iter().collect();
    let norm = grads.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt();
    if norm > clip_norm {
        let s = clip_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub v_max: Vec<f64>,
}

/// AMSGrad with bias correction and L2 decay added to the gradient.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AmsGrad {
    pub moments: BTreeMap<String, Moments>,
    pub t: u64,
}

impl AmsGrad {
    pub fn new() -> Self {
        Self::default()
    }

    /// One update of every parameter that has a gradient. Parameters
    /// without one still receive weight decay.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| TrainError::ShapeMismatch(format!("no parameter {name}")))?;
            if p.shape() != g.shape() {
                return Err(TrainError::ShapeMismatch(format!(
                    "{name}: {:?} vs {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.t += 1;
        let c1 = 1.0 - BETA1.powf(self.t as f64);
        let c2 = 1.0 - BETA2.powf(self.t as f64);
        for (name, p) in params.iter_mut() {
            let n = p.len();
            let st = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
                v_max: vec![0.0; n],
            });
            let g = grads.get(name);
            for k in 0..n {
                let theta = p.data()[k];
                let gk = g.map_or(0.0, |g| g.data()[k]) + weight_decay * theta;
                st.m[k] = BETA1 * st.m[k] + (1.0 - BETA1) * gk;
                st.v[k] = BETA2 * st.v[k] + (1.0 - BETA2) * gk * gk;
                st.v_max[k] = st.v_max[k].max(st.v[k]);
                let m_hat = st.m[k] / c1;
                let v_hat = st.v_max[k] / c2;
                p.data_mut()[k] = theta - lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
        Ok(())
    }
}

/// Halves the learning rate after `patience` epochs without strict
/// improvement of the monitored loss, down to `min_lr`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReduceOnPlateau {
    pub lr: f64,
    factor: f64,
    patience: usize,
    min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl ReduceOnPlateau {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64) -> Self {
        Self {
            lr,
            factor,
            patience,
            min_lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Records one epoch's loss and returns the learning rate for the next.
    pub fn step(&mut self, loss: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs > self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}
