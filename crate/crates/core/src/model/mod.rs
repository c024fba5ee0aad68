//! Multitask recurrent classifier.
//!
//! Architecture: each hourly bin's active codes are looked up in a sparse
//! embedding table and summed with their normalized values as weights; the
//! resulting sequence runs through a stack of LSTM (or GRU) layers; the top
//! layer's final hidden state feeds fourteen independent sigmoid heads.
//!
//! Gradients are written out by hand (backpropagation through time) and
//! checked against central finite differences in the test suite.

mod checkpoint;
mod loss;
mod network;
mod optim;
mod params;
mod predict;
mod train;

pub use checkpoint::{CheckpointMeta, ModelCheckpoint, Precision, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{multilabel_bce, PROB_EPSILON};
pub use network::{
    backward, forward, objective, BackwardOptions, BatchGradient, DropoutMasks, Gradients, LayerMasks,
};
pub use optim::{adam_step, lr_at, Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use params::{init_params, xavier_bound, LayerParams, Params};
pub use predict::{predict, predict_sequences};
pub use train::{mean_loss, train, write_loss_curve, CurvePoint, Sample, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::NUM_TASKS;

/// Fourteen probabilities in task order.
pub type PredictionVector = [f64; NUM_TASKS];

/// Labels of one sample in task order.
pub type LabelRow = [bool; NUM_TASKS];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellType {
    Lstm,
    Gru,
}

impl CellType {
    /// Stacked gate blocks per layer: `i, f, g, o` or `r, z, n`.
    pub fn gates(self) -> usize {
        match self {
            CellType::Lstm => 4,
            CellType::Gru => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub cell_type: CellType,
    pub num_tasks: usize,
    pub dropout_prob: f64,
    pub l1_strength: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dim: 300,
            hidden_size: 200,
            num_layers: 3,
            cell_type: CellType::Lstm,
            num_tasks: NUM_TASKS,
            dropout_prob: 0.4,
            l1_strength: 0.0005,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("model.embedding_dim", self.embedding_dim),
            ("model.hidden_size", self.hidden_size),
            ("model.num_layers", self.num_layers),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.num_tasks != NUM_TASKS {
            return Err(Error::config("model.num_tasks", format!("must be {NUM_TASKS}")));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::config("model.dropout_prob", "must be in [0, 1)"));
        }
        if !(self.l1_strength.is_finite() && self.l1_strength >= 0.0) {
            return Err(Error::config("model.l1_strength", "must be a finite real >= 0"));
        }
        Ok(())
    }
}
