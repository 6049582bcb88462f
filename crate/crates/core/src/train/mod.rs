//! Training, evaluation and checkpoints.

mod checkpoint;
mod eval;
mod fit;
mod optim;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use eval::{evaluate, predict_labels, EvalReport};
pub use fit::{
    run_ablation, train, AblationGrid, EarlyStop, EpochLog, Progress, TrainOutcome, ABLATION_RATIOS,
};
pub use optim::{clip_gradients, AmsGrad, Moments, ReduceOnPlateau};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetError;
use crate::nn::{ModelConfig, NnError};
use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("dataset has {0} items, need at least 5 to split")]
    DatasetTooSmall(usize),
    #[error("split is empty")]
    EmptySplit,
    #[error("non-finite loss {value} in epoch {epoch}")]
    NonFiniteLoss { epoch: usize, value: f64 },
    #[error("target {0} outside 0..8")]
    InvalidTarget(usize),
    #[error("log-probabilities are not normalised (logsumexp {0})")]
    UnnormalizedInput(f64),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub clip_norm: f64,
    pub early_stop_patience: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            weight_decay: 1e-4,
            batch_size: 32,
            max_epochs: 100,
            clip_norm: 1.0,
            early_stop_patience: 20,
            plateau_factor: 0.5,
            plateau_patience: 10,
            min_lr: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.weight_decay >= 0.0
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.clip_norm > 0.0
            && self.early_stop_patience > 0
            && self.plateau_factor > 0.0
            && self.plateau_factor < 1.0
            && self.min_lr > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// Model and training settings in one document, as read by the CLI.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Index sets of a 60/20/20 split.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

const SPLIT_FRACTIONS: [f64; 3] = [0.6, 0.2, 0.2];

/// Largest-remainder apportionment of `n` over `fractions`; ties go to the
/// earlier share.
fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (quotas[a] - counts[a] as f64, quotas[b] - counts[b] as f64);
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for k in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

/// Stratified, seeded 60/20/20 split of item indices by label. Split sizes
/// follow largest-remainder rounding of the whole dataset; each class is
/// spread over the splits as evenly as those totals allow.
pub fn split_dataset(labels: &[usize], seed: u64) -> Result<Split> {
    let n = labels.len();
    if n < 5 {
        return Err(TrainError::DatasetTooSmall(n));
    }
    let targets = apportion(n, &SPLIT_FRACTIONS);
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    by_class.iter_mut().for_each(|c| c.shuffle(&mut rng));

    // Floors of the per-class quotas first. Remaining slots go one at a time
    // to the largest fractional part, preferring classes with more unplaced
    // items.
    let mut alloc = vec![[0usize; 3]; num_classes];
    let mut frac = vec![[0.0f64; 3]; num_classes];
    for (c, members) in by_class.iter().enumerate() {
        for s in 0..3 {
            let q = SPLIT_FRACTIONS[s] * members.len() as f64;
            alloc[c][s] = (q + 1e-9).floor() as usize;
            frac[c][s] = q - alloc[c][s] as f64;
        }
    }
    let mut need: Vec<usize> = (0..3)
        .map(|s| targets[s] - alloc.iter().map(|a| a[s]).sum::<usize>())
        .collect();
    let mut spare: Vec<usize> = (0..num_classes)
        .map(|c| by_class[c].len() - alloc[c].iter().sum::<usize>())
        .collect();
    loop {
        let mut pick: Option<(usize, usize)> = None;
        for c in (0..num_classes).filter(|&c| spare[c] > 0) {
            for s in (0..3).filter(|&s| need[s] > 0) {
                let better = pick.is_none_or(|(bc, bs)| {
                    frac[c][s]
                        .total_cmp(&frac[bc][bs])
                        .then(spare[c].cmp(&spare[bc]))
                        .is_gt()
                });
                if better {
                    pick = Some((c, s));
                }
            }
        }
        let Some((c, s)) = pick else { break };
        alloc[c][s] += 1;
        frac[c][s] -= 1.0;
        spare[c] -= 1;
        need[s] -= 1;
    }

    let mut split = Split::default();
    for (c, members) in by_class.iter().enumerate() {
        let (a, b) = (alloc[c][0], alloc[c][0] + alloc[c][1]);
        split.train.extend_from_slice(&members[..a]);
        split.val.extend_from_slice(&members[a..b]);
        split.test.extend_from_slice(&members[b..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// `-log_probs[target]` for one normalised distribution over the 8 classes.
pub fn nll_loss(log_probs: &[f64], target: usize) -> Result<f64> {
    if target >= log_probs.len() {
        return Err(TrainError::InvalidTarget(target));
    }
    let m = log_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + log_probs.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    if !(lse.abs() <= 1e-6) {
        return Err(TrainError::UnnormalizedInput(lse));
    }
    Ok(-log_probs[target])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn split_sizes() {
        let labels: Vec<usize> = (0..100).map(|i| i % 8).collect();
        let s = split_dataset(&labels, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (60, 20, 20));

        let ten: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let s = split_dataset(&ten, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
        for c in 0..2 {
            assert!(s.train.iter().any(|&i| ten[i] == c));
        }
        assert_eq!(
            split_dataset(&[0, 1, 2], 0).unwrap_err(),
            TrainError::DatasetTooSmall(3)
        );
    }

    #[test]
    fn balanced_classes_split_evenly() {
        let labels: Vec<usize> = (0..512).map(|i| i % 8).collect();
        let s = split_dataset(&labels, 0).unwrap();
        for c in 0..8 {
            let count = |v: &[usize]| v.iter().filter(|&&i| labels[i] == c).count();
            assert!((38..=39).contains(&count(&s.train)));
            assert!((12..=13).contains(&count(&s.test)));
        }
    }

    #[test]
    fn nll_examples() {
        let mut lp = vec![f64::NEG_INFINITY; 8];
        lp[3] = 0.0;
        assert_eq!(nll_loss(&lp, 3).unwrap(), 0.0);
        let uniform = vec![-(8f64.ln()); 8];
        assert!((nll_loss(&uniform, 5).unwrap() - 2.0794).abs() < 1e-4);
        assert_eq!(
            nll_loss(&uniform, 9).unwrap_err(),
            TrainError::InvalidTarget(9)
        );
        assert!(matches!(
            nll_loss(&[0.0; 8], 0),
            Err(TrainError::UnnormalizedInput(_))
        ));
    }

    proptest! {
        #[test]
        fn split_is_a_partition(labels in proptest::collection::vec(0usize..8, 5..120), seed in 0u64..50) {
            let s = split_dataset(&labels, seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            let t = apportion(labels.len(), &SPLIT_FRACTIONS);
            prop_assert_eq!((s.train.len(), s.val.len(), s.test.len()), (t[0], t[1], t[2]));
            prop_assert_eq!(split_dataset(&labels, seed).unwrap(), s);
        }
    }
}
