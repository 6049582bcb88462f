use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::nn::{Model, ModelConfig, ParamStore};
use crate::tensor::Tensor;

use super::{Result, TrainConfig, TrainError};

const FORMAT: &str = "meshgrade-checkpoint";
const VERSION: u32 = 1;

/// A tensor with every value written as a decimal string that parses back
/// to the identical `f64`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredTensor {
    rows: usize,
    cols: usize,
    data: Vec<String>,
}

impl StoredTensor {
    fn from_tensor(t: &Tensor) -> Self {
        Self {
            rows: t.rows(),
            cols: t.cols(),
            data: t.data().iter().map(|v| format!("{v:?}")).collect(),
        }
    }

    fn to_tensor(&self, name: &str) -> Result<Tensor> {
        let data = self
            .data
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| TrainError::Checkpoint(format!("{name}: {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::matrix(self.rows, self.cols, data)
            .map_err(|e| TrainError::Checkpoint(format!("{name}: {e}")))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    format: String,
    version: u32,
    model: ModelConfig,
    train: Option<TrainConfig>,
    best_epoch: Option<usize>,
    params: BTreeMap<String, StoredTensor>,
    buffers: BTreeMap<String, StoredTensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train: Option<TrainConfig>,
    pub best_epoch: Option<usize>,
}

fn store(map: &ParamStore) -> BTreeMap<String, StoredTensor> {
    map.iter()
        .map(|(k, v)| (k.clone(), StoredTensor::from_tensor(v)))
        .collect()
}

fn load(map: &BTreeMap<String, StoredTensor>) -> Result<ParamStore> {
    map.iter()
        .map(|(k, v)| Ok((k.clone(), v.to_tensor(k)?)))
        .collect()
}

pub fn write_checkpoint(ck: &Checkpoint) -> String {
    let doc = CheckpointDoc {
        format: FORMAT.into(),
        version: VERSION,
        model: ck.model.config.clone(),
        train: ck.train.clone(),
        best_epoch: ck.best_epoch,
        params: store(&ck.model.params),
        buffers: store(&ck.model.buffers),
    };
    serde_json::to_string_pretty(&doc).expect("checkpoint serializes") + "\n"
}

pub fn read_checkpoint(text: &str) -> Result<Checkpoint> {
    let doc: CheckpointDoc =
        serde_json::from_str(text).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    if doc.format != FORMAT || doc.version != VERSION {
        return Err(TrainError::Checkpoint(format!(
            "unsupported format {} v{}",
            doc.format, doc.version
        )));
    }
    let model = Model {
        config: doc.model,
        params: load(&doc.params)?,
        buffers: load(&doc.buffers)?,
    };
    model.validate()?;
    Ok(Checkpoint {
        model,
        train: doc.train,
        best_epoch: doc.best_epoch,
    })
}
