//! Mini-batch SGD over sampled image pairs, epoch logging and checkpoints.

mod checkpoint;
mod run;
mod sgd;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ParamRecord};
pub use run::{
    assemble_batch, fit_accuracy, train, EpochLog, TrainData, TrainOptions, TrainState, LOG_HEADER,
};
pub use sgd::{pair_gradients, sgd_step, BatchMetrics, PairBatch, PairStats, Sgd};

use crate::config::TrainConfig;
use crate::error::{Error, Result};

/// `base_lr` until the last `final_lr_epochs` epochs, then `final_lr`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= cfg.max_epochs {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} outside 0..{}",
            cfg.max_epochs
        )));
    }
    Ok(if epoch + cfg.final_lr_epochs < cfg.max_epochs {
        cfg.base_lr
    } else {
        cfg.final_lr
    })
}
