//! Composite loss, optimization loop and early stopping for the segmentation
//! networks.

mod early_stopping;
mod loss;
mod trainer;

use serde::{Deserialize, Serialize};

pub use early_stopping::{EarlyStopping, Verdict};
pub use loss::{
    pretext_loss, pretext_loss_grad, total_loss, weighted_bce, weighted_bce_grad,
    weighted_bce_logits, LossTerms, PROB_EPS,
};
pub use trainer::{
    train_cofcn, train_unet, PatchPool, TrainConfig, TrainSample, TrainSet, TrainedNetwork,
};

/// One line of a metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}
