use crate::dataset::{LabeledGraphDataset, LABEL_NAMES};
use crate::nn::{batch_graphs, Model};

use super::{Result, TrainError};

const EVAL_BATCH: usize = 32;

/// Class index of each row's largest log-probability, ties to the lower class.
pub fn predict_labels(
    model: &Model,
    ds: &LabeledGraphDataset,
    idx: &[usize],
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let graphs: Vec<_> = chunk.iter().map(|&i| &ds.items[i].0).collect();
        let lp = model.predict(&batch_graphs(&graphs)?)?;
        for r in 0..chunk.len() {
            let row = lp.row(r);
            let best = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            out.push(best);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `counts[true][predicted]`.
    pub counts: [[usize; 8]; 8],
    /// Row-normalised percentages; rows without samples are all zero.
    pub confusion: [[f64; 8]; 8],
    pub per_class_recall: [f64; 8],
    pub accuracy: f64,
}

impl EvalReport {
    pub fn from_predictions(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.is_empty() {
            return Err(TrainError::EmptySplit);
        }
        let mut counts = [[0usize; 8]; 8];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= 8 || p >= 8 {
                return Err(TrainError::InvalidTarget(t.max(p)));
            }
            counts[t][p] += 1;
        }
        let mut confusion = [[0.0; 8]; 8];
        let mut per_class_recall = [0.0; 8];
        for t in 0..8 {
            let total: usize = counts[t].iter().sum();
            if total > 0 {
                for p in 0..8 {
                    confusion[t][p] = 100.0 * counts[t][p] as f64 / total as f64;
                }
                per_class_recall[t] = counts[t][t] as f64 / total as f64;
            }
        }
        let correct: usize = (0..8).map(|c| counts[c][c]).sum();
        Ok(Self {
            counts,
            confusion,
            per_class_recall,
            accuracy: correct as f64 / truth.len() as f64,
        })
    }

    /// Recall of the single-defect classes N-O, N-S and N-D.
    pub fn property_recalls(&self) -> [f64; 3] {
        [
            self.per_class_recall[1],
            self.per_class_recall[2],
            self.per_class_recall[3],
        ]
    }

    /// Row-normalised confusion matrix in percent, one row per true label.
    pub fn confusion_csv(&self) -> String {
        let mut out = format!("label,{}\n", LABEL_NAMES.join(","));
        for (t, row) in self.confusion.iter().enumerate() {
            out.push_str(LABEL_NAMES[t]);
            for v in row {
                out.push_str(&format!(",{v:.2}"));
            }
            out.push('\n');
        }
        out
    }

    /// Accuracy and property recalls in percent.
    pub fn summary_csv(&self) -> String {
        let [o, s, d] = self.property_recalls();
        format!(
            "accuracy,recall_orthogonality,recall_smoothing,recall_distribution\n{:.2},{:.2},{:.2},{:.2}\n",
            100.0 * self.accuracy,
            100.0 * o,
            100.0 * s,
            100.0 * d
        )
    }
}

/// Eval-mode predictions on `idx` summarised against the dataset labels.
pub fn evaluate(model: &Model, ds: &LabeledGraphDataset, idx: &[usize]) -> Result<EvalReport> {
    if idx.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let predicted = predict_labels(model, ds, idx)?;
    let truth: Vec<usize> = idx.iter().map(|&i| ds.items[i].1).collect();
    EvalReport::from_predictions(&truth, &predicted)
}
