//! Graph attention network with self-attention pooling for mesh
//! classification.
//!
//! Each level applies an attention convolution, scores nodes for pooling,
//! keeps the top fraction of every graph and reads the survivors out as
//! `mean ‖ max`. The readouts of all levels are concatenated and classified
//! by a small MLP ending in log-softmax.

mod batch;
mod conv;
mod model;
mod pool;

pub use batch::{batch_graphs, Batch};
pub use conv::{conv_layer, gat_score_static, gatv2_score, ConvParams, Topology, ATTENTION_SLOPE};
pub use model::{forward, BnStats, ForwardOutput, Mode, Model, ParamStore};
pub use pool::{keep_count, pool_apply, readout, sagpool_scores, top_rank, Pooled};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tape, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("graphs in a batch have different feature widths ({0} vs {1})")]
    MixedFeatureWidth(usize, usize),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

/// Inter-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Elu,
    Relu,
    Gelu,
}

impl Activation {
    pub const ALL: [Activation; 4] = [Self::Elu, Self::Relu, Self::Gelu, Self::LeakyRelu];

    /// Negative slope of the leaky variant.
    pub const LEAKY_SLOPE: f64 = 0.01;

    pub fn apply(self, tape: &Tape, x: Var) -> Var {
        match self {
            Self::LeakyRelu => tape.leaky_relu(x, Self::LEAKY_SLOPE),
            Self::Elu => tape.elu(x),
            Self::Relu => tape.relu(x),
            Self::Gelu => tape.gelu(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::LeakyRelu => "leaky_relu",
            Self::Elu => "elu",
            Self::Relu => "relu",
            Self::Gelu => "gelu",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| NnError::InvalidConfig(format!("unknown activation {s:?}")))
    }
}

/// Convolution used at every level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvKind {
    /// Dynamic attention: `att · LeakyReLU(W_l h_i + W_r h_j)`.
    Gatv2,
    /// Static attention: `LeakyReLU(a_l · W_l h_i + a_r · W_r h_j)`.
    Gat,
    /// Fixed symmetric-normalised neighbourhood averaging, no attention.
    Gcn,
}

impl std::str::FromStr for ConvKind {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gatv2" => Ok(Self::Gatv2),
            "gat" => Ok(Self::Gat),
            "gcn" => Ok(Self::Gcn),
            _ => Err(NnError::InvalidConfig(format!("unknown conv kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub in_features: usize,
    pub out_classes: usize,
    pub num_levels: usize,
    pub hidden: usize,
    pub pooling_ratio: f64,
    pub activation: Activation,
    pub conv_kind: ConvKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_features: 6,
            out_classes: 8,
            num_levels: 4,
            hidden: 12,
            pooling_ratio: 0.3,
            activation: Activation::LeakyRelu,
            conv_kind: ConvKind::Gatv2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(NnError::InvalidConfig(msg.into()));
        if !(self.pooling_ratio > 0.0 && self.pooling_ratio <= 1.0) {
            return bad("pooling_ratio must be in (0, 1]");
        }
        if self.num_levels == 0 {
            return bad("num_levels must be at least 1");
        }
        if self.in_features == 0 || self.hidden == 0 || self.out_classes < 2 {
            return bad("in_features and hidden must be positive, out_classes at least 2");
        }
        if self.jk_width() < 4 {
            return bad("num_levels * hidden too small for the classifier head");
        }
        Ok(())
    }

    /// Width of the concatenated per-level readouts.
    pub fn jk_width(&self) -> usize {
        self.num_levels * 2 * self.hidden
    }

    /// Layer widths of the classifier head, input first.
    pub fn mlp_widths(&self) -> [usize; 4] {
        let jk = self.jk_width();
        [jk, jk / 2, jk / 4, self.out_classes]
    }
}
